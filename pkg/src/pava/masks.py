"""Run-length encoded binary masks and the `PAVA-MASK v1` file format.

A mask file stores one boolean mask per frame of a clip. Layout (text,
UTF-8, LF line endings):

    PAVA-MASK v1
    frames=T height=H width=W
    <run lengths for frame 0>
    ...
    <run lengths for frame T-1>

Each frame line holds space-separated run lengths over the row-major
flattened H*W grid. Runs alternate False, True, False, ... and always
start with a False run; a frame whose first pixel is True therefore
begins with a leading 0. Run lengths must sum to H*W and only the
leading run may be zero.

The same codec, prefixed with the frame dimensions ("H W r0 r1 ..."),
is used for single-mask strings inside detection interchange files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

MASK_MAGIC = "PAVA-MASK v1"


class MaskFormatError(ValueError):
    """Raised when mask data violates the documented format."""


def encode_rle(mask: np.ndarray) -> list[int]:
    """Encode a 2-D boolean mask as alternating run lengths.

    The first run counts False pixels; a leading 0 marks a mask whose
    first pixel is True.
    """
    arr = np.asarray(mask, dtype=bool)
    if arr.ndim != 2:
        raise MaskFormatError(f"mask must be 2-D, got shape {arr.shape}")
    flat = arr.ravel()
    n = flat.size
    if n == 0:
        raise MaskFormatError("mask must be nonempty")
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], boundaries, [n]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def decode_rle(runs: Sequence[int], shape: tuple[int, int]) -> np.ndarray:
    """Invert :func:`encode_rle` for the given (height, width)."""
    h, w = int(shape[0]), int(shape[1])
    if h < 1 or w < 1:
        raise MaskFormatError(f"invalid mask shape {shape!r}")
    runs = [int(r) for r in runs]
    if not runs:
        raise MaskFormatError("empty run list")
    for i, r in enumerate(runs):
        if r < 0:
            raise MaskFormatError(f"negative run length {r} at position {i}")
        if r == 0 and i != 0:
            raise MaskFormatError(f"zero run length at position {i} (only the leading run may be 0)")
    total = sum(runs)
    if total != h * w:
        raise MaskFormatError(f"run lengths sum to {total}, expected {h * w}")
    values = np.zeros(len(runs), dtype=bool)
    values[1::2] = True
    return np.repeat(values, runs).reshape(h, w)


def encode_mask_string(mask: np.ndarray) -> str:
    """One-line form "H W r0 r1 ..." used in detection interchange files."""
    arr = np.asarray(mask, dtype=bool)
    runs = encode_rle(arr)
    return " ".join([str(arr.shape[0]), str(arr.shape[1])] + [str(r) for r in runs])


def decode_mask_string(text: str) -> np.ndarray:
    parts = text.split()
    if len(parts) < 3:
        raise MaskFormatError(f"mask string too short: {text!r}")
    try:
        numbers = [int(p) for p in parts]
    except ValueError as exc:
        raise MaskFormatError(f"non-integer token in mask string: {text!r}") from exc
    return decode_rle(numbers[2:], (numbers[0], numbers[1]))


def write_mask_file(path: str | Path, masks: np.ndarray) -> None:
    """Write a (T, H, W) boolean stack as a `PAVA-MASK v1` file."""
    arr = np.asarray(masks, dtype=bool)
    if arr.ndim != 3:
        raise MaskFormatError(f"mask stack must be (T, H, W), got shape {arr.shape}")
    t, h, w = arr.shape
    if t < 1:
        raise MaskFormatError("mask stack must hold at least one frame")
    lines = [MASK_MAGIC, f"frames={t} height={h} width={w}"]
    for frame in arr:
        lines.append(" ".join(str(r) for r in encode_rle(frame)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_mask_file(path: str | Path) -> np.ndarray:
    """Read a `PAVA-MASK v1` file back into a (T, H, W) boolean stack."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0] != MASK_MAGIC:
        raise MaskFormatError(f"{path}: missing '{MASK_MAGIC}' header")
    if len(lines) < 2:
        raise MaskFormatError(f"{path}: missing dimensions line")
    fields = lines[1].split()
    dims: dict[str, int] = {}
    for field in fields:
        key, _, value = field.partition("=")
        if not value:
            raise MaskFormatError(f"{path}: malformed dimensions field {field!r}")
        try:
            dims[key] = int(value)
        except ValueError as exc:
            raise MaskFormatError(f"{path}: non-integer dimension {field!r}") from exc
    missing = {"frames", "height", "width"} - dims.keys()
    if missing:
        raise MaskFormatError(f"{path}: dimensions line missing {sorted(missing)}")
    t, h, w = dims["frames"], dims["height"], dims["width"]
    body = lines[2:]
    if len(body) != t:
        raise MaskFormatError(f"{path}: expected {t} frame lines, found {len(body)}")
    out = np.empty((t, h, w), dtype=bool)
    for i, line in enumerate(body):
        try:
            runs = [int(p) for p in line.split()]
        except ValueError as exc:
            raise MaskFormatError(f"{path}: non-integer run on frame {i}") from exc
        try:
            out[i] = decode_rle(runs, (h, w))
        except MaskFormatError as exc:
            raise MaskFormatError(f"{path}: frame {i}: {exc}") from exc
    return out
