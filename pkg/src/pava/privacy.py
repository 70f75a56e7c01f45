"""Sensitive-object redaction and detector-continuity scoring.

Pipeline per frame: detect instances with a pluggable segmentation
backend, keep detections of the 7 sensitive classes above the confidence
threshold, merge their masks (with dilation), then composite a full-frame
Gaussian blur through the merged mask. Pixels outside the mask are
bit-identical to the input.

Detector temporal continuity is scored with the Anomaly Frame Count
metric: inside a window, a short interruption of an object's presence
(a run of absent frames strictly shorter than the threshold, bounded by
present frames on both sides) is physically implausible and counted as
detector dropout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from math import ceil
from pathlib import Path
from typing import Mapping, Protocol, Sequence, runtime_checkable

import numpy as np
from scipy import ndimage

from .masks import decode_mask_string, encode_mask_string, read_mask_file
from .preprocess import FrameSequence
from .video import mask_sidecar_path

# Logical sensitive classes and their default mapping into the COCO
# vocabulary used by the reference backend.
SENSITIVE_CLASS_NAMES = (
    "digital screen",
    "laptop",
    "mobile",
    "book",
    "person",
    "keyboard",
    "toilet/urinal",
)

DEFAULT_BACKEND_MAP: dict[str, tuple[str, ...]] = {
    "digital screen": ("tv",),
    "laptop": ("laptop",),
    "mobile": ("cell phone",),
    "book": ("book",),
    "person": ("person",),
    "keyboard": ("keyboard",),
    "toilet/urinal": ("toilet",),
}

# torchvision detection models emit indices into this 91-slot COCO table.
COCO_INSTANCE_CATEGORIES = (
    "__background__", "person", "bicycle", "car", "motorcycle", "airplane", "bus",
    "train", "truck", "boat", "traffic light", "fire hydrant", "N/A", "stop sign",
    "parking meter", "bench", "bird", "cat", "dog", "horse", "sheep", "cow",
    "elephant", "bear", "zebra", "giraffe", "N/A", "backpack", "umbrella", "N/A",
    "N/A", "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard",
    "sports ball", "kite", "baseball bat", "baseball glove", "skateboard",
    "surfboard", "tennis racket", "bottle", "N/A", "wine glass", "cup", "fork",
    "knife", "spoon", "bowl", "banana", "apple", "sandwich", "orange", "broccoli",
    "carrot", "hot dog", "pizza", "donut", "cake", "chair", "couch",
    "potted plant", "bed", "N/A", "dining table", "N/A", "N/A", "toilet", "N/A",
    "tv", "laptop", "mouse", "remote", "keyboard", "cell phone", "microwave",
    "oven", "toaster", "sink", "refrigerator", "N/A", "book", "clock", "vase",
    "scissors", "teddy bear", "hair drier", "toothbrush",
)


class RedactionError(RuntimeError):
    """Backend or blur failure during redaction."""


@dataclass(frozen=True)
class InstanceDetection:
    """One detected object instance. bbox is the tight half-open box
    (x0, y0, x1, y1) of the mask."""

    class_name: str
    confidence: float
    mask: np.ndarray
    bbox: tuple[int, int, int, int]

    def __post_init__(self) -> None:
        if not 0 <= self.confidence <= 1:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        if self.mask.ndim != 2 or self.mask.dtype != bool:
            raise ValueError("mask must be a 2-D boolean array")

    @classmethod
    def from_mask(cls, class_name: str, confidence: float, mask: np.ndarray) -> "InstanceDetection":
        mask = np.asarray(mask, dtype=bool)
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        if rows.size == 0:
            bbox = (0, 0, 0, 0)
        else:
            bbox = (int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)
        return cls(class_name, float(confidence), mask, bbox)


@dataclass(frozen=True)
class SensitiveClassSet:
    names: tuple[str, ...] = SENSITIVE_CLASS_NAMES
    backend_map: Mapping[str, tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_BACKEND_MAP)
    )
    confidence_threshold: float = 0.5

    def __post_init__(self) -> None:
        if len(self.names) != 7 or len(set(self.names)) != 7:
            raise ValueError(f"expected exactly 7 distinct sensitive classes, got {self.names!r}")
        for name in self.names:
            labels = self.backend_map.get(name, ())
            if not labels:
                raise ValueError(f"sensitive class {name!r} has no backend labels")
        if not 0 <= self.confidence_threshold <= 1:
            raise ValueError(f"confidence threshold must be in [0, 1], got {self.confidence_threshold}")

    def logical_for(self, backend_label: str) -> str | None:
        """Logical sensitive name for a backend label, or None if not sensitive.
        Logical names pass through unchanged so file backends may store them."""
        if backend_label in self.names:
            return backend_label
        for name in self.names:
            if backend_label in self.backend_map.get(name, ()):
                return name
        return None


@dataclass(frozen=True)
class BlurParams:
    sigma: float = 12.0
    kernel_radius: int | None = None
    mask_dilation: int = 2

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.kernel_radius is not None and self.kernel_radius < 1:
            raise ValueError(f"kernel_radius must be >= 1, got {self.kernel_radius}")
        if self.mask_dilation < 0:
            raise ValueError(f"mask_dilation must be >= 0, got {self.mask_dilation}")

    @property
    def radius(self) -> int:
        return self.kernel_radius if self.kernel_radius is not None else ceil(3 * self.sigma)


@dataclass(frozen=True)
class PresenceSeries:
    """Per sensitive class, a boolean per-frame presence vector."""

    presence: Mapping[str, np.ndarray]
    n_frames: int

    def __post_init__(self) -> None:
        if self.n_frames < 0:
            raise ValueError("n_frames must be nonnegative")
        for name, vec in self.presence.items():
            if vec.shape != (self.n_frames,) or vec.dtype != bool:
                raise ValueError(f"presence vector for {name!r} must be ({self.n_frames},) bool")


@dataclass(frozen=True)
class AnomalyReport:
    anomalous_frames: Mapping[str, np.ndarray]
    anomaly_frame_count: int
    total_frames: int
    accuracy_percent: float


@runtime_checkable
class DetectionBackend(Protocol):
    """Detector contract. `shareable` states whether one handle may be used
    concurrently from several workers. Frames arrive as RGB float arrays
    in [0, 1]; adapters convert channel order if their runtime differs."""

    shareable: bool

    def detect(self, frame: np.ndarray, frame_index: int = 0) -> list[InstanceDetection]:
        ...


class GroundTruthBackend:
    """Deterministic fake backend that echoes a clip's planted ground-truth
    mask file. Reports the configured backend-vocabulary label so the
    mapping into logical sensitive names is exercised."""

    shareable = True

    def __init__(self, masks: np.ndarray, class_name: str = "tv", confidence: float = 1.0):
        masks = np.asarray(masks, dtype=bool)
        if masks.ndim != 3:
            raise ValueError("masks must be (T, H, W)")
        self.masks = masks
        self.class_name = class_name
        self.confidence = confidence

    @classmethod
    def for_clip(cls, clip_path: str | Path, **kwargs) -> "GroundTruthBackend":
        return cls(read_mask_file(mask_sidecar_path(clip_path)), **kwargs)

    def detect(self, frame: np.ndarray, frame_index: int = 0) -> list[InstanceDetection]:
        if not 0 <= frame_index < self.masks.shape[0]:
            raise RedactionError(f"no ground-truth mask for frame {frame_index}")
        mask = self.masks[frame_index]
        if mask.shape != frame.shape[:2]:
            raise RedactionError(f"ground-truth mask shape {mask.shape} != frame {frame.shape[:2]}")
        if not mask.any():
            return []
        return [InstanceDetection.from_mask(self.class_name, self.confidence, mask)]


class DetectionFileBackend:
    """Replays detections from an interchange file (see write_detections)."""

    shareable = True

    def __init__(self, path: str | Path):
        self.by_frame = read_detections(path)

    def detect(self, frame: np.ndarray, frame_index: int = 0) -> list[InstanceDetection]:
        return list(self.by_frame.get(frame_index, ()))


class TorchMaskRCNNBackend:
    """Reference backend: torchvision Mask R-CNN with weights loaded from a
    local checkpoint path (no network access). Masks are thresholded at
    mask_threshold; confidence filtering happens later in filter_sensitive."""

    shareable = False

    def __init__(self, model_path: str | Path, device: str = "cpu", mask_threshold: float = 0.5):
        import torch
        from torchvision.models.detection import maskrcnn_resnet50_fpn

        self.device = device
        self.mask_threshold = mask_threshold
        self.model = maskrcnn_resnet50_fpn(weights=None, num_classes=len(COCO_INSTANCE_CATEGORIES))
        try:
            state = torch.load(str(model_path), map_location=device, weights_only=True)
        except Exception as exc:
            raise RedactionError(f"cannot load backend weights from {model_path}: {exc}") from exc
        self.model.load_state_dict(state)
        self.model.to(device).eval()

    def detect(self, frame: np.ndarray, frame_index: int = 0) -> list[InstanceDetection]:
        import torch

        tensor = torch.from_numpy(np.ascontiguousarray(frame.transpose(2, 0, 1))).float()
        with torch.no_grad():
            output = self.model([tensor.to(self.device)])[0]
        detections = []
        for label, score, mask in zip(output["labels"], output["scores"], output["masks"]):
            index = int(label)
            name = COCO_INSTANCE_CATEGORIES[index] if index < len(COCO_INSTANCE_CATEGORIES) else "N/A"
            binary = mask[0].cpu().numpy() > self.mask_threshold
            detections.append(InstanceDetection.from_mask(name, float(score), binary))
        return detections


def filter_sensitive(
    detections: Sequence[InstanceDetection], sensitive: SensitiveClassSet
) -> list[InstanceDetection]:
    """Keep detections mapping into the sensitive set at or above the
    confidence threshold, relabeled with their logical names."""
    kept = []
    for det in detections:
        logical = sensitive.logical_for(det.class_name)
        if logical is None or det.confidence < sensitive.confidence_threshold:
            continue
        kept.append(det if det.class_name == logical else replace(det, class_name=logical))
    return kept


def merge_masks(
    detections: Sequence[InstanceDetection], dilation: int, frame_shape: tuple[int, int]
) -> np.ndarray:
    """Pixelwise OR of instance masks, then square morphological dilation
    by `dilation` pixels (a single pixel grows to (2d+1) x (2d+1))."""
    merged = np.zeros(frame_shape, dtype=bool)
    for det in detections:
        if det.mask.shape != tuple(frame_shape):
            raise ValueError(f"mask shape {det.mask.shape} does not match frame {frame_shape}")
        merged |= det.mask
    if dilation > 0 and merged.any():
        size = 2 * dilation + 1
        merged = ndimage.binary_dilation(merged, structure=np.ones((size, size), dtype=bool))
    return merged


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    """1-D Gaussian taps on [-radius, radius], normalized to unit sum."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if radius < 1:
        raise ValueError("radius must be >= 1")
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def blur_frame(frame: np.ndarray, params: BlurParams) -> np.ndarray:
    """Full-frame Gaussian blur: separable kernel, reflective (symmetric)
    border, computed in float64, returned in the input dtype."""
    kernel = gaussian_kernel(params.sigma, params.radius)
    work = np.asarray(frame, dtype=np.float64)
    work = ndimage.convolve1d(work, kernel, axis=0, mode="reflect")
    work = ndimage.convolve1d(work, kernel, axis=1, mode="reflect")
    if np.issubdtype(frame.dtype, np.floating):
        return work.astype(frame.dtype)
    return np.clip(np.rint(work), 0, 255).astype(frame.dtype)


def blur_masked(frame: np.ndarray, mask: np.ndarray, params: BlurParams) -> np.ndarray:
    """Blur-then-composite: blurred content where mask is true, the input
    bit-exact everywhere else."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != frame.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match frame {frame.shape[:2]}")
    if not mask.any():
        return frame.copy()
    blurred = blur_frame(frame, params)
    out = frame.copy()
    out[mask] = blurred[mask]
    return out


@dataclass(frozen=True)
class FrameError:
    frame_index: int
    message: str


@dataclass(frozen=True)
class RedactionResult:
    sequence: FrameSequence
    presence: PresenceSeries
    errors: tuple[FrameError, ...]


def redact_clip(
    seq: FrameSequence,
    backend: DetectionBackend,
    sensitive: SensitiveClassSet | None = None,
    params: BlurParams | None = None,
    *,
    fail_open: bool = False,
) -> RedactionResult:
    """Per frame: detect, filter, merge, blur. The presence series records
    post-filter presence per sensitive class per frame.

    A backend failure on a frame is a hard error naming the frame unless
    fail_open is set, in which case the frame passes through unblurred and
    the failure is collected (privacy-unsafe; off by default).
    """
    sensitive = sensitive if sensitive is not None else SensitiveClassSet()
    params = params if params is not None else BlurParams()
    t, h, w = seq.n_frames, seq.height, seq.width
    presence = {name: np.zeros(t, dtype=bool) for name in sensitive.names}
    errors: list[FrameError] = []
    out = np.empty_like(seq.frames)
    for i in range(t):
        frame = seq.frames[i]
        try:
            detections = backend.detect(frame, frame_index=i)
        except Exception as exc:
            if not fail_open:
                raise RedactionError(f"detection failed on frame {i}: {exc}") from exc
            errors.append(FrameError(i, str(exc)))
            out[i] = frame
            continue
        kept = filter_sensitive(detections, sensitive)
        for det in kept:
            presence[det.class_name][i] = True
        mask = merge_masks(kept, params.mask_dilation, (h, w))
        out[i] = blur_masked(frame, mask, params) if mask.any() else frame
    return RedactionResult(
        sequence=replace(seq, frames=out),
        presence=PresenceSeries(presence, t),
        errors=tuple(errors),
    )


def anomaly_frame_count(
    presence: PresenceSeries, window: int = 20, threshold: int = 5
) -> AnomalyReport:
    """Flag frames inside implausibly short detector-absence gaps.

    A gap is a maximal run of absent frames bounded by present frames on
    both sides. Every frame of a gap shorter than `threshold` and no
    longer than `window` is anomalous. The accuracy statistic is
    100 * anomalous_frames / total_frames (lower is better; 0 means the
    detector never dropped out implausibly).
    """
    if threshold < 1:
        raise ValueError(f"threshold must be >= 1, got {threshold}")
    if window < threshold:
        raise ValueError(f"window ({window}) must be >= threshold ({threshold})")
    t = presence.n_frames
    if t < 1:
        raise ValueError("empty presence series")
    flagged: dict[str, np.ndarray] = {}
    any_flag = np.zeros(t, dtype=bool)
    for name, vec in presence.presence.items():
        marks = np.zeros(t, dtype=bool)
        present_at = np.flatnonzero(vec)
        for prev, nxt in zip(present_at[:-1], present_at[1:]):
            gap = int(nxt - prev - 1)
            if 0 < gap < threshold and gap <= window:
                marks[prev + 1 : nxt] = True
        flagged[name] = marks
        any_flag |= marks
    count = int(any_flag.sum())
    return AnomalyReport(
        anomalous_frames=flagged,
        anomaly_frame_count=count,
        total_frames=t,
        accuracy_percent=100.0 * count / t,
    )


def write_detections(path: str | Path, per_frame: Mapping[int, Sequence[InstanceDetection]]) -> None:
    """Detection interchange file: one JSON object per instance per frame
    with fields frame_index, class_name, confidence, rle_mask."""
    lines = []
    for frame_index in sorted(per_frame):
        for det in per_frame[frame_index]:
            lines.append(
                json.dumps(
                    {
                        "frame_index": frame_index,
                        "class_name": det.class_name,
                        "confidence": det.confidence,
                        "rle_mask": encode_mask_string(det.mask),
                    }
                )
            )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_detections(path: str | Path) -> dict[int, list[InstanceDetection]]:
    by_frame: dict[int, list[InstanceDetection]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        required = {"frame_index", "class_name", "confidence", "rle_mask"}
        if not required <= set(obj):
            raise ValueError(f"{path}:{lineno}: missing fields {sorted(required - set(obj))}")
        det = InstanceDetection.from_mask(
            obj["class_name"], float(obj["confidence"]), decode_mask_string(obj["rle_mask"])
        )
        by_frame.setdefault(int(obj["frame_index"]), []).append(det)
    return by_frame
