"""The activity classifier and its checkpoint format.

Architecture: per-frame features from a pluggable backbone, a learned
linear projection to `feature_dim`, a single-layer bidirectional LSTM,
framewise sigmoid attention pooling (or a plain frame mean), and a fully
connected + batch-norm + softmax head.

Checkpoints are versioned torch containers holding the feature-extractor
spec, classifier config, provenance, and the full state dict; loading
uses weights_only deserialization and round-trips bit-exactly.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch
from torch import nn

from .preprocess import FrameSequence

CHECKPOINT_FORMAT = "pava-checkpoint"
CHECKPOINT_VERSION = 1

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

ATTENTION_POSITIONS = ("post_lstm", "pre_lstm")


@dataclass(frozen=True)
class FeatureExtractorSpec:
    name: str
    input_resolution: tuple[int, int]
    raw_feature_dim: int
    frozen: bool = True

    def __post_init__(self) -> None:
        if self.raw_feature_dim < 1:
            raise ValueError("raw_feature_dim must be >= 1")
        h, w = self.input_resolution
        if h < 1 or w < 1:
            raise ValueError(f"invalid input resolution {self.input_resolution!r}")


@dataclass(frozen=True)
class ClassifierConfig:
    feature_dim: int = 512
    lstm_hidden: int = 1024
    bidirectional: bool = True
    num_classes: int = 18
    attention: bool = True
    attention_position: str = "post_lstm"
    n_frames: int = 40

    def __post_init__(self) -> None:
        for name in ("feature_dim", "lstm_hidden", "num_classes", "n_frames"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.attention_position not in ATTENTION_POSITIONS:
            raise ValueError(
                f"attention_position must be one of {ATTENTION_POSITIONS}, got {self.attention_position!r}"
            )

    @property
    def state_dim(self) -> int:
        # Per-frame LSTM output width: 2 * hidden when bidirectional.
        return self.lstm_hidden * (2 if self.bidirectional else 1)


class TinyTestBackbone(nn.Module):
    """3-layer convnet, random init, for CPU-only desk-scale runs.

    Emits 256 features per frame (16 channels average-pooled to a 4x4
    grid), which keeps coarse spatial position linearly decodable.
    """

    RAW_FEATURE_DIM = 256
    DEFAULT_RESOLUTION = (64, 64)

    def __init__(self):
        super().__init__()
        self.conv1 = nn.Conv2d(3, 8, kernel_size=3, padding=1)
        self.conv2 = nn.Conv2d(8, 16, kernel_size=3, padding=1)
        self.conv3 = nn.Conv2d(16, 16, kernel_size=3, padding=1)
        self.pool = nn.MaxPool2d(2)
        self.head_pool = nn.AdaptiveAvgPool2d((4, 4))
        self.act = nn.ReLU()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.pool(self.act(self.conv1(x)))
        x = self.pool(self.act(self.conv2(x)))
        x = self.act(self.conv3(x))
        return torch.flatten(self.head_pool(x), 1)


def _torchvision_trunk(model_name: str) -> nn.Module:
    import torchvision.models as tvm

    model = getattr(tvm, model_name)(weights=None)
    if model_name.startswith("densenet"):
        return nn.Sequential(model.features, nn.ReLU(), nn.AdaptiveAvgPool2d(1), nn.Flatten(1))
    # resnet family: drop the classification fc
    return nn.Sequential(*list(model.children())[:-1], nn.Flatten(1))


@dataclass(frozen=True)
class BackboneEntry:
    factory: Callable[[], nn.Module]
    raw_feature_dim: int
    default_resolution: tuple[int, int]


BACKBONES: dict[str, BackboneEntry] = {
    "tiny_test_backbone": BackboneEntry(
        TinyTestBackbone, TinyTestBackbone.RAW_FEATURE_DIM, TinyTestBackbone.DEFAULT_RESOLUTION
    ),
    "resnext101": BackboneEntry(lambda: _torchvision_trunk("resnext101_32x8d"), 2048, (248, 248)),
    "densenet121": BackboneEntry(lambda: _torchvision_trunk("densenet121"), 1024, (512, 512)),
    "wide_resnet101": BackboneEntry(lambda: _torchvision_trunk("wide_resnet101_2"), 2048, (324, 324)),
}


def backbone_spec(name: str, frozen: bool = True, input_resolution: tuple[int, int] | None = None) -> FeatureExtractorSpec:
    if name not in BACKBONES:
        raise KeyError(f"unknown backbone {name!r}; known: {sorted(BACKBONES)}")
    entry = BACKBONES[name]
    return FeatureExtractorSpec(
        name=name,
        input_resolution=tuple(input_resolution or entry.default_resolution),
        raw_feature_dim=entry.raw_feature_dim,
        frozen=frozen,
    )


class FrameAttention(nn.Module):
    """Scalar sigmoid score per frame: score_t = sigmoid(w . state_t + b)."""

    def __init__(self, dim: int):
        super().__init__()
        self.score = nn.Linear(dim, 1)

    def forward(self, states: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.score(states))


class ActivityClassifier(nn.Module):
    def __init__(self, spec: FeatureExtractorSpec, config: ClassifierConfig, backbone: nn.Module):
        super().__init__()
        self.spec = spec
        self.config = config
        self.backbone = backbone
        self.projection = nn.Linear(spec.raw_feature_dim, config.feature_dim)
        self.lstm = nn.LSTM(
            input_size=config.feature_dim,
            hidden_size=config.lstm_hidden,
            num_layers=1,
            batch_first=True,
            bidirectional=config.bidirectional,
        )
        self.attention: FrameAttention | None = None
        if config.attention:
            att_dim = config.feature_dim if config.attention_position == "pre_lstm" else config.state_dim
            self.attention = FrameAttention(att_dim)
        self.fc = nn.Linear(config.state_dim, config.num_classes)
        self.bn = nn.BatchNorm1d(config.num_classes)
        if spec.frozen:
            self.backbone.requires_grad_(False)
            self.backbone.eval()

    def train(self, mode: bool = True) -> "ActivityClassifier":
        super().train(mode)
        if self.spec.frozen:
            # Frozen backbones stay in eval mode so their normalization
            # statistics never drift during training.
            self.backbone.eval()
        return self

    def extract_features(self, clip: torch.Tensor) -> torch.Tensor:
        """(B, T, 3, H, W) -> (B, T, feature_dim) via backbone + projection."""
        if clip.ndim != 5 or clip.shape[2] != 3:
            raise ValueError(f"expected (B, T, 3, H, W), got {tuple(clip.shape)}")
        h, w = self.spec.input_resolution
        if clip.shape[3] != h or clip.shape[4] != w:
            raise ValueError(
                f"resolution mismatch: clip is {tuple(clip.shape[3:])}, backbone expects {(h, w)}"
            )
        b, t = clip.shape[0], clip.shape[1]
        flat = clip.reshape(b * t, 3, h, w)
        if self.spec.frozen:
            with torch.no_grad():
                raw = self.backbone(flat)
        else:
            raw = self.backbone(flat)
        return self.projection(raw.reshape(b, t, -1))

    def bilstm_forward(self, features: torch.Tensor) -> torch.Tensor:
        """(B, T, feature_dim) -> (B, T, state_dim): forward and backward
        hidden states concatenated per frame."""
        states, _ = self.lstm(features)
        return states

    def framewise_attention(self, states: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Score-weighted clip vector: sum_t s_t * state_t / sum_t s_t.
        Returns (clip_vector (B, D), scores (B, T, 1))."""
        if self.attention is None:
            raise RuntimeError("attention is disabled in this configuration")
        scores = self.attention(states)
        pooled = (scores * states).sum(dim=1) / scores.sum(dim=1)
        return pooled, scores

    def head_forward(self, clip_vector: torch.Tensor) -> torch.Tensor:
        """(B, state_dim) -> (B, num_classes) probabilities."""
        return torch.softmax(self.bn(self.fc(clip_vector)), dim=-1)

    def forward(self, clip: torch.Tensor) -> torch.Tensor:
        features = self.extract_features(clip)
        if self.attention is not None and self.config.attention_position == "pre_lstm":
            features = features * self.attention(features)
            states = self.bilstm_forward(features)
            pooled = states.mean(dim=1)
        elif self.attention is not None:
            states = self.bilstm_forward(features)
            pooled, _ = self.framewise_attention(states)
        else:
            states = self.bilstm_forward(features)
            pooled = states.mean(dim=1)
        return self.head_forward(pooled)


@dataclass
class TrainedModel:
    spec: FeatureExtractorSpec
    config: ClassifierConfig
    module: ActivityClassifier
    provenance: dict = field(default_factory=dict)

    def clone(self) -> "TrainedModel":
        return TrainedModel(
            spec=self.spec,
            config=self.config,
            module=copy.deepcopy(self.module),
            provenance=dict(self.provenance),
        )


def new_model(
    spec: FeatureExtractorSpec | str,
    config: ClassifierConfig,
    seed: int = 0,
    backbone_weights: str | Path | None = None,
) -> TrainedModel:
    """Build a freshly initialized model. All parameter init flows from the
    seed; optional backbone weights are loaded from a local file."""
    if isinstance(spec, str):
        spec = backbone_spec(spec)
    if spec.name not in BACKBONES:
        raise KeyError(f"unknown backbone {spec.name!r}; known: {sorted(BACKBONES)}")
    torch.manual_seed(seed)
    backbone = BACKBONES[spec.name].factory()
    if backbone_weights is not None:
        state = torch.load(str(backbone_weights), map_location="cpu", weights_only=True)
        backbone.load_state_dict(state)
    module = ActivityClassifier(spec, config, backbone)
    return TrainedModel(spec=spec, config=config, module=module, provenance={})


def save_checkpoint(path: str | Path, model: TrainedModel) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": asdict(model.spec),
        "config": asdict(model.config),
        "provenance": dict(model.provenance),
        "state_dict": model.module.state_dict(),
    }
    torch.save(payload, str(path))


def load_checkpoint(path: str | Path) -> TrainedModel:
    payload = torch.load(str(path), map_location="cpu", weights_only=True)
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')!r}")
    spec_dict = dict(payload["spec"])
    spec_dict["input_resolution"] = tuple(spec_dict["input_resolution"])
    spec = FeatureExtractorSpec(**spec_dict)
    config = ClassifierConfig(**payload["config"])
    model = new_model(spec, config, seed=0)
    model.module.load_state_dict(payload["state_dict"], strict=True)
    model.provenance = dict(payload["provenance"])
    return model


def forward_clip(model: TrainedModel, seq: FrameSequence) -> np.ndarray:
    """Probabilities for one preprocessed clip (deterministic: eval mode)."""
    module = model.module
    module.eval()
    frames = np.ascontiguousarray(seq.frames.transpose(0, 3, 1, 2), dtype=np.float32)
    with torch.no_grad():
        probs = module(torch.from_numpy(frames).unsqueeze(0))
    return probs.squeeze(0).numpy()
