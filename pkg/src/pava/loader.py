"""Clip loading and preprocessing for training and inference.

Frame sampling is seeded per clip (stable hash of the clip_id mixed into
the sample seed), so a clip's sampled frames are identical across epochs
and across runs; prepared clips can therefore be cached.
"""

from __future__ import annotations

import zlib
from dataclasses import replace
from typing import Sequence

import numpy as np
import torch

from .dataset import ClipRecord
from .preprocess import FrameSequence, SampleSpec, prepare_clip
from .video import read_clip


def clip_seed(base_seed: int, clip_id: str) -> np.random.SeedSequence:
    """Per-clip seed material, stable across processes."""
    return np.random.SeedSequence([base_seed, zlib.crc32(clip_id.encode("utf-8"))])


class ClipLoader:
    def __init__(
        self,
        sample: SampleSpec,
        resolution: tuple[int, int],
        channel_mean: Sequence[float] = (0.0, 0.0, 0.0),
        channel_std: Sequence[float] = (1.0, 1.0, 1.0),
        gamma_target: float | None = 0.5,
        cache: bool = True,
    ):
        self.sample = sample
        self.resolution = (int(resolution[0]), int(resolution[1]))
        self.channel_mean = tuple(channel_mean)
        self.channel_std = tuple(channel_std)
        self.gamma_target = gamma_target
        self._cache: dict[tuple[str, str], np.ndarray] | None = {} if cache else None

    def prepared(self, record: ClipRecord) -> np.ndarray:
        """Sampled, gamma-corrected, resized/normalized frames (T, H, W, 3)."""
        key = (record.clip_id, record.path)
        if self._cache is not None and key in self._cache:
            return self._cache[key]
        frames, fps = read_clip(record.path)
        seq = FrameSequence.from_uint8(frames, fps)
        # entropy -> int so SampleSpec stays a plain dataclass of ints
        seed = int(clip_seed(self.sample.seed, record.clip_id).generate_state(1)[0])
        out = prepare_clip(
            seq,
            replace(self.sample, seed=seed),
            self.resolution,
            self.channel_mean,
            self.channel_std,
            self.gamma_target,
        )
        arr = np.ascontiguousarray(out.frames, dtype=np.float32)
        if self._cache is not None:
            self._cache[key] = arr
        return arr

    def tensor(self, record: ClipRecord) -> torch.Tensor:
        """(T, 3, H, W) float32 tensor for one clip."""
        arr = self.prepared(record)
        return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))

    def batch(self, records: Sequence[ClipRecord], flips: Sequence[bool] | None = None) -> torch.Tensor:
        """(B, T, 3, H, W) stack; flips mirror individual clips left-right."""
        tensors = []
        for i, record in enumerate(records):
            x = self.tensor(record)
            if flips is not None and flips[i]:
                x = torch.flip(x, dims=[-1])
            tensors.append(x)
        return torch.stack(tensors)
