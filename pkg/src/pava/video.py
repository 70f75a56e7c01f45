"""Clip I/O: uint8 RGB frame stacks stored as .npy arrays or video containers.

The .npy form (uint8, shape (T, H, W, 3), RGB) is the byte-deterministic
format used by the synthetic generator; container formats go through
OpenCV and inherit codec behavior.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

VIDEO_SUFFIXES = {".avi", ".mp4", ".mov", ".mkv"}
ARRAY_SUFFIXES = {".npy"}
CLIP_SUFFIXES = VIDEO_SUFFIXES | ARRAY_SUFFIXES

DEFAULT_FPS = 30.0


class ClipReadError(RuntimeError):
    """Raised when a clip file cannot be decoded."""


@dataclass(frozen=True)
class ClipInfo:
    n_frames: int
    height: int
    width: int
    fps: float | None


def _validate_stack(arr: np.ndarray, path: Path) -> np.ndarray:
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise ClipReadError(f"{path}: expected shape (T, H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1:
        raise ClipReadError(f"{path}: clip has no frames")
    if arr.dtype != np.uint8:
        raise ClipReadError(f"{path}: expected uint8 pixels, got {arr.dtype}")
    return arr


def read_clip(path: str | Path) -> tuple[np.ndarray, float | None]:
    """Decode a clip to (uint8 RGB frames (T, H, W, 3), fps or None)."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in ARRAY_SUFFIXES:
        try:
            arr = np.load(path, allow_pickle=False)
        except Exception as exc:
            raise ClipReadError(f"{path}: {exc}") from exc
        return _validate_stack(np.ascontiguousarray(arr), path), None
    if suffix in VIDEO_SUFFIXES:
        import cv2

        cap = cv2.VideoCapture(str(path))
        if not cap.isOpened():
            raise ClipReadError(f"{path}: cannot open video")
        fps = cap.get(cv2.CAP_PROP_FPS) or None
        frames = []
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            frames.append(cv2.cvtColor(frame, cv2.COLOR_BGR2RGB))
        cap.release()
        if not frames:
            raise ClipReadError(f"{path}: no decodable frames")
        return np.stack(frames).astype(np.uint8), fps
    raise ClipReadError(f"{path}: unsupported clip suffix {suffix!r}")


def write_clip(path: str | Path, frames: np.ndarray, fps: float = DEFAULT_FPS) -> None:
    """Write uint8 RGB frames to .npy (exact) or a video container."""
    path = Path(path)
    frames = _validate_stack(np.ascontiguousarray(frames, dtype=np.uint8), path)
    suffix = path.suffix.lower()
    if suffix in ARRAY_SUFFIXES:
        np.save(path, frames)
        return
    if suffix in VIDEO_SUFFIXES:
        import cv2

        fourcc = cv2.VideoWriter_fourcc(*("mp4v" if suffix == ".mp4" else "MJPG"))
        h, w = frames.shape[1], frames.shape[2]
        writer = cv2.VideoWriter(str(path), fourcc, fps, (w, h))
        if not writer.isOpened():
            raise ClipReadError(f"{path}: cannot open video writer")
        for frame in frames:
            writer.write(cv2.cvtColor(frame, cv2.COLOR_RGB2BGR))
        writer.release()
        return
    raise ClipReadError(f"{path}: unsupported clip suffix {suffix!r}")


def probe_clip(path: str | Path) -> ClipInfo:
    """Cheap readability/shape check used by ingest."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix in ARRAY_SUFFIXES:
        try:
            arr = np.load(path, mmap_mode="r", allow_pickle=False)
        except Exception as exc:
            raise ClipReadError(f"{path}: {exc}") from exc
        if arr.ndim != 4 or arr.shape[-1] != 3 or arr.shape[0] < 1:
            raise ClipReadError(f"{path}: expected shape (T, H, W, 3), got {arr.shape}")
        if arr.dtype != np.uint8:
            raise ClipReadError(f"{path}: expected uint8 pixels, got {arr.dtype}")
        return ClipInfo(int(arr.shape[0]), int(arr.shape[1]), int(arr.shape[2]), None)
    if suffix in VIDEO_SUFFIXES:
        import cv2

        cap = cv2.VideoCapture(str(path))
        if not cap.isOpened():
            raise ClipReadError(f"{path}: cannot open video")
        ok, frame = cap.read()
        n = int(cap.get(cv2.CAP_PROP_FRAME_COUNT))
        fps = cap.get(cv2.CAP_PROP_FPS) or None
        cap.release()
        if not ok or frame is None:
            raise ClipReadError(f"{path}: no decodable frames")
        return ClipInfo(max(n, 1), int(frame.shape[0]), int(frame.shape[1]), fps)
    raise ClipReadError(f"{path}: unsupported clip suffix {suffix!r}")


def mask_sidecar_path(clip_path: str | Path) -> Path:
    """Ground-truth mask file planted next to a synthetic clip."""
    return Path(clip_path).with_suffix(".mask")
