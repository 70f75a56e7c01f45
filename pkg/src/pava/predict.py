"""Clip-level predictors: single models and calibrated ensembles."""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import ClipRecord
from .ensemble import EnsembleSpec, combine
from .loader import ClipLoader
from .model import TrainedModel, forward_clip, load_checkpoint
from .preprocess import FrameSequence, SampleSpec


class ModelPredictor:
    """Callable record -> class probabilities for one trained model."""

    def __init__(self, model: TrainedModel, loader: ClipLoader):
        self.model = model
        self.loader = loader

    def __call__(self, record: ClipRecord) -> np.ndarray:
        return forward_clip(self.model, FrameSequence(self.loader.prepared(record)))


class EnsemblePredictor:
    """Callable record -> fused probabilities over ensemble members."""

    def __init__(self, predictors: Sequence[ModelPredictor], weights: np.ndarray, mode: str):
        if len(predictors) != weights.shape[0]:
            raise ValueError(
                f"{len(predictors)} predictors but weights for {weights.shape[0]} members"
            )
        self.predictors = tuple(predictors)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.mode = mode

    def __call__(self, record: ClipRecord) -> np.ndarray:
        stacked = np.stack([p(record) for p in self.predictors], axis=0)
        return combine(stacked, self.weights, self.mode)


def loader_for_model(
    model: TrainedModel,
    sample: SampleSpec,
    channel_mean: Sequence[float] = (0.0, 0.0, 0.0),
    channel_std: Sequence[float] = (1.0, 1.0, 1.0),
    gamma_target: float = 0.5,
    cache: bool = True,
) -> ClipLoader:
    """A ClipLoader matched to the model's input resolution and frame count."""
    return ClipLoader(
        sample=replace(sample, n_frames=model.config.n_frames),
        resolution=model.spec.input_resolution,
        channel_mean=channel_mean,
        channel_std=channel_std,
        gamma_target=gamma_target,
        cache=cache,
    )


def load_ensemble(
    spec: EnsembleSpec,
    sample: SampleSpec,
    channel_mean: Sequence[float] = (0.0, 0.0, 0.0),
    channel_std: Sequence[float] = (1.0, 1.0, 1.0),
    gamma_target: float = 0.5,
) -> EnsemblePredictor:
    """Load every member checkpoint and wire up the fused predictor."""
    predictors = []
    for path in spec.member_paths:
        model = load_checkpoint(Path(path))
        if model.config.num_classes != len(spec.labels):
            raise ValueError(
                f"{path}: model has {model.config.num_classes} classes, "
                f"ensemble spec lists {len(spec.labels)}"
            )
        loader = loader_for_model(
            model, sample, channel_mean, channel_std, gamma_target, cache=False
        )
        predictors.append(ModelPredictor(model, loader))
    return EnsemblePredictor(predictors, spec.weights, spec.mode)
