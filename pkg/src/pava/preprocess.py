"""Frame preprocessing: gamma correction, frame sampling, resize/normalize, flips.

All operations are pure functions of their inputs plus an explicit seed,
so they are safe to call concurrently on different clips.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class FrameSequence:
    """A decoded clip: float frames (T, H, W, 3), RGB, unit range [0, 1].

    Normalized model inputs (mean/std applied) reuse the same container
    and may leave the unit range.
    """

    frames: np.ndarray
    source_fps: float | None = None

    def __post_init__(self) -> None:
        arr = self.frames
        if not isinstance(arr, np.ndarray) or arr.ndim != 4 or arr.shape[-1] != 3:
            raise ValueError(f"frames must be (T, H, W, 3) ndarray, got {getattr(arr, 'shape', None)}")
        if arr.shape[0] < 1:
            raise ValueError("clip must hold at least one frame")
        if not np.issubdtype(arr.dtype, np.floating):
            raise ValueError(f"frames must be floating point, got {arr.dtype}")

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def height(self) -> int:
        return int(self.frames.shape[1])

    @property
    def width(self) -> int:
        return int(self.frames.shape[2])

    @classmethod
    def from_uint8(cls, frames: np.ndarray, source_fps: float | None = None) -> "FrameSequence":
        arr = np.asarray(frames)
        if arr.dtype != np.uint8:
            raise ValueError(f"expected uint8 frames, got {arr.dtype}")
        return cls(arr.astype(np.float32) / 255.0, source_fps)

    def to_uint8(self) -> np.ndarray:
        return np.clip(np.rint(self.frames * 255.0), 0, 255).astype(np.uint8)


@dataclass(frozen=True)
class GammaParams:
    gamma: float
    target_mean: float = 0.5

    def __post_init__(self) -> None:
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if not 0 < self.target_mean < 1:
            raise ValueError(f"target_mean must be in (0, 1), got {self.target_mean}")


@dataclass(frozen=True)
class SampleSpec:
    n_frames: int = 40
    seed: int = 0
    padding: str = "repeat_last"

    def __post_init__(self) -> None:
        if self.n_frames < 1:
            raise ValueError(f"n_frames must be >= 1, got {self.n_frames}")
        if self.padding != "repeat_last":
            raise ValueError(f"unsupported padding {self.padding!r}")


def estimate_gamma(mean_brightness: float, target_mean: float = 0.5) -> float:
    """Exponent g with mean_brightness ** g == target_mean.

    g = ln(target_mean) / ln(mean_brightness). Estimated per clip from the
    first sampled frame's mean and applied uniformly to the clip.
    """
    if not 0 < mean_brightness < 1:
        raise ValueError(f"mean brightness must be in (0, 1), got {mean_brightness} (degenerate frame)")
    if not 0 < target_mean < 1:
        raise ValueError(f"target mean must be in (0, 1), got {target_mean}")
    return math.log(target_mean) / math.log(mean_brightness)


def apply_gamma(seq: FrameSequence, params: GammaParams) -> FrameSequence:
    if params.gamma == 1.0:
        return seq
    return replace(seq, frames=np.power(seq.frames, params.gamma).astype(seq.frames.dtype))


def sample_indices(n_available: int, spec: SampleSpec) -> np.ndarray:
    """Frame indices for one clip: n distinct sorted draws, or all frames
    plus repeat-last padding when the clip is shorter than requested."""
    if n_available < 1:
        raise ValueError("cannot sample from an empty sequence")
    n = spec.n_frames
    if n_available >= n:
        rng = np.random.default_rng(spec.seed)
        picked = rng.choice(n_available, size=n, replace=False)
        picked.sort()
        return picked.astype(np.int64)
    pad = np.full(n - n_available, n_available - 1, dtype=np.int64)
    return np.concatenate([np.arange(n_available, dtype=np.int64), pad])


def sample_frames(seq: FrameSequence, spec: SampleSpec) -> FrameSequence:
    indices = sample_indices(seq.n_frames, spec)
    return replace(seq, frames=seq.frames[indices])


def resize_normalize(
    seq: FrameSequence,
    resolution: tuple[int, int],
    channel_mean: Sequence[float] = (0.0, 0.0, 0.0),
    channel_std: Sequence[float] = (1.0, 1.0, 1.0),
) -> FrameSequence:
    """Bilinear resize to (H', W'), then per-channel (x - mean) / std."""
    h, w = int(resolution[0]), int(resolution[1])
    if h < 1 or w < 1:
        raise ValueError(f"resolution must be positive, got {resolution!r}")
    mean = np.asarray(channel_mean, dtype=np.float32)
    std = np.asarray(channel_std, dtype=np.float32)
    if mean.shape != (3,) or std.shape != (3,):
        raise ValueError("channel_mean and channel_std must be 3-vectors")
    if np.any(std == 0):
        raise ValueError("channel_std components must be nonzero")
    frames = seq.frames.astype(np.float32)
    if (seq.height, seq.width) != (h, w):
        import cv2

        resized = np.empty((seq.n_frames, h, w, 3), dtype=np.float32)
        for i, frame in enumerate(frames):
            # cv2 takes dsize as (width, height)
            resized[i] = cv2.resize(frame, (w, h), interpolation=cv2.INTER_LINEAR)
        frames = resized
    return replace(seq, frames=(frames - mean) / std)


def random_hflip(seq: FrameSequence, probability: float, seed) -> FrameSequence:
    """Mirror the whole clip left-right with the given probability.

    Clip-level rather than per-frame to preserve temporal coherence.
    """
    if not 0 <= probability <= 1:
        raise ValueError(f"probability must be in [0, 1], got {probability}")
    if probability == 0:
        return seq
    rng = np.random.default_rng(seed)
    if probability < 1 and rng.random() >= probability:
        return seq
    return replace(seq, frames=np.ascontiguousarray(seq.frames[:, :, ::-1, :]))


def prepare_clip(
    seq: FrameSequence,
    sample: SampleSpec,
    resolution: tuple[int, int],
    channel_mean: Sequence[float] = (0.0, 0.0, 0.0),
    channel_std: Sequence[float] = (1.0, 1.0, 1.0),
    gamma_target: float | None = 0.5,
) -> FrameSequence:
    """Standard inference-time pipeline: sample, gamma-correct, resize/normalize.

    Gamma is estimated from the first sampled frame's mean; a degenerate
    mean (0 or 1, e.g. an all-black frame) carries no brightness
    information and falls back to gamma 1.
    """
    out = sample_frames(seq, sample)
    if gamma_target is not None:
        mean = float(out.frames[0].mean())
        if 0 < mean < 1:
            gamma = estimate_gamma(mean, gamma_target)
            out = apply_gamma(out, GammaParams(gamma, gamma_target))
    return resize_normalize(out, resolution, channel_mean, channel_std)
