"""Clip manifests, train/test splitting, sub-dataset assembly, synthetic data.

The manifest file is line-delimited JSON (`manifest.jsonl`), one object
per line with exactly the fields `clip_id, path, label, subject_id,
split, variant`. Paths are stored relative to the manifest file where
possible and resolved to absolute paths on load.
"""

from __future__ import annotations

import json
import math
import os
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .labels import FPV_O_CLASSES
from .masks import write_mask_file
from .video import CLIP_SUFFIXES, ClipReadError, mask_sidecar_path, probe_clip, write_clip

MANIFEST_FIELDS = ("clip_id", "path", "label", "subject_id", "split", "variant")
SPLITS = ("train", "test")
VARIANTS = ("original", "blurred")


class ManifestError(ValueError):
    """Raised for malformed manifests or infeasible manifest operations."""


@dataclass(frozen=True)
class ClipRecord:
    clip_id: str
    path: str
    label: str
    subject_id: str
    split: str = "train"
    variant: str = "original"

    def __post_init__(self) -> None:
        if not self.clip_id:
            raise ManifestError("clip_id must be nonempty")
        if self.split not in SPLITS:
            raise ManifestError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.variant not in VARIANTS:
            raise ManifestError(f"variant must be one of {VARIANTS}, got {self.variant!r}")


class DatasetManifest:
    """Immutable ordered collection of clip records.

    Uniqueness key is (clip_id, variant): a mixed manifest holds each
    clip_id exactly twice, once per variant.
    """

    def __init__(self, records: Iterable[ClipRecord]):
        self.records: tuple[ClipRecord, ...] = tuple(records)
        seen: set[tuple[str, str]] = set()
        for rec in self.records:
            key = (rec.clip_id, rec.variant)
            if key in seen:
                raise ManifestError(f"duplicate record for clip {rec.clip_id!r} variant {rec.variant!r}")
            seen.add(key)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ClipRecord]:
        return iter(self.records)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DatasetManifest):
            return NotImplemented
        return self.records == other.records

    @property
    def sub_dataset(self) -> str:
        variants = {rec.variant for rec in self.records}
        if variants == {"original", "blurred"}:
            return "mixed"
        if variants == {"blurred"}:
            return "blurred"
        return "original"

    @property
    def clip_ids(self) -> set[str]:
        return {rec.clip_id for rec in self.records}

    def labels(self) -> tuple[str, ...]:
        return tuple(sorted({rec.label for rec in self.records}))

    def class_histogram(self, split: str | None = None) -> dict[str, int]:
        hist: dict[str, int] = {}
        for rec in self.records:
            if split is not None and rec.split != split:
                continue
            hist[rec.label] = hist.get(rec.label, 0) + 1
        return hist

    def by_label(self) -> dict[str, list[ClipRecord]]:
        groups: dict[str, list[ClipRecord]] = {}
        for rec in self.records:
            groups.setdefault(rec.label, []).append(rec)
        return groups

    def filter(self, *, split: str | None = None, variant: str | None = None, label: str | None = None) -> "DatasetManifest":
        return DatasetManifest(
            rec
            for rec in self.records
            if (split is None or rec.split == split)
            and (variant is None or rec.variant == variant)
            and (label is None or rec.label == label)
        )

    def map_records(self, fn: Callable[[ClipRecord], ClipRecord]) -> "DatasetManifest":
        return DatasetManifest(fn(rec) for rec in self.records)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        base = path.resolve().parent
        lines = []
        for rec in self.records:
            rec_path = rec.path
            if os.path.isabs(rec_path):
                rec_path = os.path.relpath(rec_path, start=base)
            lines.append(
                json.dumps(
                    {
                        "clip_id": rec.clip_id,
                        "path": rec_path,
                        "label": rec.label,
                        "subject_id": rec.subject_id,
                        "split": rec.split,
                        "variant": rec.variant,
                    }
                )
            )
        path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        base = path.resolve().parent
        records = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise ManifestError(f"{path}:{lineno}: expected an object per line")
            if set(obj) != set(MANIFEST_FIELDS):
                raise ManifestError(
                    f"{path}:{lineno}: fields must be exactly {sorted(MANIFEST_FIELDS)}, got {sorted(obj)}"
                )
            rec_path = obj["path"]
            if not os.path.isabs(rec_path):
                rec_path = str((base / rec_path).resolve())
            records.append(
                ClipRecord(
                    clip_id=obj["clip_id"],
                    path=rec_path,
                    label=obj["label"],
                    subject_id=obj["subject_id"],
                    split=obj["split"],
                    variant=obj["variant"],
                )
            )
        return cls(records)


@dataclass(frozen=True)
class IngestError:
    path: str
    reason: str


def ingest(
    root_path: str | Path,
    label_map: Mapping[str, str],
    *,
    exclude: Iterable[str] = (),
    subject_pattern: str | None = None,
    split: str = "train",
) -> tuple[DatasetManifest, list[IngestError]]:
    """Scan per-class directories under root into a manifest.

    label_map maps directory names to class names; a directory absent
    from the map is a hard error. Unreadable clip files become entries
    in the returned error list instead of records. clip_ids listed in
    `exclude` are skipped entirely (label-noise exclusion list).
    `subject_pattern` is a regex whose first group extracts subject_id
    from the clip_id; unmatched clips fall back to subject_id=clip_id.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise ManifestError(f"ingest root {root} is not a directory")
    excluded = set(exclude)
    pattern = re.compile(subject_pattern) if subject_pattern else None
    records: list[ClipRecord] = []
    errors: list[IngestError] = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        if class_dir.name not in label_map:
            raise ManifestError(f"directory {class_dir.name!r} has no label mapping")
        label = label_map[class_dir.name]
        for clip_path in sorted(class_dir.rglob("*")):
            if not clip_path.is_file() or clip_path.suffix.lower() not in CLIP_SUFFIXES:
                continue
            rel = clip_path.relative_to(root).with_suffix("")
            clip_id = rel.as_posix()
            if clip_id in excluded:
                continue
            try:
                probe_clip(clip_path)
            except ClipReadError as exc:
                errors.append(IngestError(str(clip_path), str(exc)))
                continue
            subject_id = clip_id
            if pattern is not None:
                m = pattern.search(clip_id)
                if m and m.groups():
                    subject_id = m.group(1)
            records.append(
                ClipRecord(
                    clip_id=clip_id,
                    path=str(clip_path.resolve()),
                    label=label,
                    subject_id=subject_id,
                    split=split,
                    variant="original",
                )
            )
    records.sort(key=lambda r: r.clip_id)
    return DatasetManifest(records), errors


def _largest_remainder(total: int, weights: Sequence[int], caps: Sequence[int]) -> list[int]:
    """Integer allocation of `total` proportional to weights, capped per entry."""
    wsum = sum(weights)
    if wsum == 0:
        raise ManifestError("cannot allocate over empty weights")
    exact = [total * w / wsum for w in weights]
    alloc = [min(int(math.floor(e)), c) for e, c in zip(exact, caps)]
    remainder = total - sum(alloc)
    order = sorted(
        range(len(weights)),
        key=lambda i: (-(exact[i] - math.floor(exact[i])), i),
    )
    while remainder > 0:
        progressed = False
        for i in order:
            if remainder == 0:
                break
            if alloc[i] < caps[i]:
                alloc[i] += 1
                remainder -= 1
                progressed = True
        if not progressed:
            raise ManifestError("allocation infeasible: caps too small")
    return alloc


def _subject_split(
    manifest: DatasetManifest, train_count: int, test_count: int, seed: int
) -> tuple[DatasetManifest, DatasetManifest]:
    groups: dict[str, list[ClipRecord]] = {}
    for rec in manifest.records:
        groups.setdefault(rec.subject_id, []).append(rec)
    subjects = sorted(groups)
    rng = np.random.default_rng(seed)
    rng.shuffle(subjects)
    sizes = [len(groups[s]) for s in subjects]
    total = sum(sizes)
    # Feasible iff some subject subset's size lands in [test_count, total - train_count].
    lo, hi = test_count, total - train_count
    n = len(subjects)
    best: list[str] | None = None
    chosen: list[bool] = [False] * n

    def dfs(i: int, acc: int) -> bool:
        nonlocal best
        if lo <= acc <= hi:
            best = [subjects[j] for j in range(n) if chosen[j]]
            return True
        if i == n or acc > hi:
            return False
        chosen[i] = True
        if dfs(i + 1, acc + sizes[i]):
            return True
        chosen[i] = False
        return dfs(i + 1, acc)

    if not dfs(0, 0):
        blocker = max(subjects, key=lambda s: len(groups[s]))
        raise ManifestError(
            f"no subject-disjoint split reaches test={test_count} with train={train_count}; "
            f"blocking subject {blocker!r} holds {len(groups[blocker])} of {total} clips"
        )
    test_subjects = set(best or [])
    test_pool = [rec for s in sorted(test_subjects) for rec in groups[s]]
    train_pool = [rec for s in sorted(set(subjects) - test_subjects) for rec in groups[s]]
    rng.shuffle(test_pool)
    rng.shuffle(train_pool)
    test_recs = [replace(r, split="test") for r in test_pool[:test_count]]
    train_recs = [replace(r, split="train") for r in train_pool[:train_count]]
    train_recs.sort(key=lambda r: (r.clip_id, r.variant))
    test_recs.sort(key=lambda r: (r.clip_id, r.variant))
    return DatasetManifest(train_recs), DatasetManifest(test_recs)


def split(
    manifest: DatasetManifest,
    train_count: int,
    test_count: int,
    seed: int = 0,
    by_subject: bool = False,
) -> tuple[DatasetManifest, DatasetManifest]:
    """Partition a manifest into disjoint train/test manifests.

    Default mode is label-stratified (largest-remainder allocation of the
    test quota per class); by_subject instead keeps every subject wholly
    on one side. Deterministic under a fixed seed. Records beyond
    train_count + test_count are dropped.
    """
    if train_count < 0 or test_count < 0:
        raise ManifestError("split counts must be nonnegative")
    if train_count + test_count > len(manifest):
        raise ManifestError(
            f"split counts ({train_count} + {test_count}) exceed manifest size {len(manifest)}"
        )
    if by_subject:
        return _subject_split(manifest, train_count, test_count, seed)
    groups = manifest.by_label()
    labels = sorted(groups)
    sizes = [len(groups[lab]) for lab in labels]
    test_quota = _largest_remainder(test_count, sizes, sizes)
    rest = [n - q for n, q in zip(sizes, test_quota)]
    train_quota = _largest_remainder(train_count, rest, rest) if train_count else [0] * len(labels)
    rng = np.random.default_rng(seed)
    train_recs: list[ClipRecord] = []
    test_recs: list[ClipRecord] = []
    for lab, tq, trq in zip(labels, test_quota, train_quota):
        pool = sorted(groups[lab], key=lambda r: (r.clip_id, r.variant))
        order = rng.permutation(len(pool))
        picked = [pool[i] for i in order]
        test_recs.extend(replace(r, split="test") for r in picked[:tq])
        train_recs.extend(replace(r, split="train") for r in picked[tq : tq + trq])
    train_recs.sort(key=lambda r: (r.clip_id, r.variant))
    test_recs.sort(key=lambda r: (r.clip_id, r.variant))
    return DatasetManifest(train_recs), DatasetManifest(test_recs)


def build_mixed(original: DatasetManifest, blurred: DatasetManifest) -> DatasetManifest:
    """Union of an original and a blurred manifest over the same clip set."""
    orig_ids = original.clip_ids
    blur_ids = blurred.clip_ids
    if orig_ids != blur_ids:
        missing = sorted(orig_ids ^ blur_ids)
        shown = ", ".join(missing[:8]) + ("..." if len(missing) > 8 else "")
        raise ManifestError(f"clip_id mismatch between variants ({len(missing)} ids): {shown}")
    bad = [r.clip_id for r in original if r.variant != "original"]
    if bad:
        raise ManifestError(f"original manifest contains non-original variants: {bad[:5]}")
    bad = [r.clip_id for r in blurred if r.variant != "blurred"]
    if bad:
        raise ManifestError(f"blurred manifest contains non-blurred variants: {bad[:5]}")
    records = sorted(
        list(original.records) + list(blurred.records), key=lambda r: (r.clip_id, r.variant)
    )
    return DatasetManifest(records)


@dataclass(frozen=True)
class SensitiveRegionSpec:
    """Static planted rectangle, pixel coordinates, half-open bounds."""

    x0: int
    y0: int
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1 or self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"invalid sensitive region {self!r}")

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y0 + self.height), slice(self.x0, self.x0 + self.width)


@dataclass(frozen=True)
class SynthConfig:
    classes: int = 4
    clips_per_class: int = 10
    frames: int = 32
    resolution: tuple[int, int] = (64, 64)
    sensitive_region_spec: SensitiveRegionSpec | None = None
    seed: int = 0
    subjects: int = 5
    fps: float = 30.0

    def __post_init__(self) -> None:
        if not 2 <= self.classes <= len(FPV_O_CLASSES):
            raise ValueError(f"classes must be in 2..{len(FPV_O_CLASSES)}, got {self.classes}")
        if self.clips_per_class < 1:
            raise ValueError("clips_per_class must be >= 1")
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        h, w = self.resolution
        if h < 16 or w < 16:
            raise ValueError(f"resolution too small: {self.resolution}")
        if self.subjects < 1:
            raise ValueError("subjects must be >= 1")

    def region(self) -> SensitiveRegionSpec:
        if self.sensitive_region_spec is not None:
            return self.sensitive_region_spec
        h, w = self.resolution
        return SensitiveRegionSpec(x0=w // 6, y0=h // 6, width=w // 4, height=h // 4)


def _synth_clip(config: SynthConfig, class_index: int, clip_index: int) -> np.ndarray:
    """One clip: a bright blob translating along the class's direction over a
    textured background, with a static checkerboard "sensitive" rectangle.

    The blob is the global intensity maximum of every frame, so its
    per-frame argmax position recovers the motion direction.
    """
    h, w = config.resolution
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, class_index, clip_index]))
    # Blocky smooth background in [0.25, 0.45], static over time.
    cell = 8
    grid = rng.random((math.ceil(h / cell), math.ceil(w / cell)))
    bg = np.repeat(np.repeat(grid, cell, axis=0), cell, axis=1)[:h, :w]
    bg = 0.25 + 0.20 * bg
    tint = rng.uniform(-0.02, 0.02, size=3)
    frame_base = np.clip(bg[:, :, None] + tint[None, None, :], 0.0, 1.0)

    region = config.region()
    ys, xs = region.slices()
    yy, xx = np.mgrid[0:h, 0:w]
    checker = np.where(((yy // 2) + (xx // 2)) % 2 == 0, 0.15, 0.85)
    frame_base = frame_base.copy()
    frame_base[ys, xs, :] = checker[ys, xs, None]

    theta = 2.0 * math.pi * class_index / config.classes
    speed = rng.uniform(1.0, 1.4)
    dx, dy = math.cos(theta) * speed, math.sin(theta) * speed
    half = (config.frames - 1) / 2.0
    cx = w / 2.0 - dx * half + rng.uniform(-2.0, 2.0)
    cy = h / 2.0 - dy * half + rng.uniform(-2.0, 2.0)

    radius = 2.5
    frames = np.empty((config.frames, h, w, 3), dtype=np.uint8)
    for t in range(config.frames):
        px, py = cx + dx * t, cy + dy * t
        bump = np.exp(-((xx - px) ** 2 + (yy - py) ** 2) / (2.0 * radius**2))
        frame = np.maximum(frame_base, (0.98 * bump)[:, :, None])
        frames[t] = np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)
    return frames


def synth_dataset(config: SynthConfig, out_dir: str | Path) -> DatasetManifest:
    """Generate a labeled synthetic dataset with planted sensitive regions.

    Labels are the first `classes` canonical class names. Each clip is
    written as `<label>_<i>.npy` with a ground-truth `PAVA-MASK v1`
    sidecar marking the planted rectangle in every frame. Generation is
    byte-deterministic under a fixed seed.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise ManifestError(f"output directory {out} is not writable: {exc}") from exc
    h, w = config.resolution
    region = config.region()
    ys, xs = region.slices()
    if region.y0 + region.height > h or region.x0 + region.width > w:
        raise ValueError(f"sensitive region {region} exceeds resolution {config.resolution}")
    mask = np.zeros((h, w), dtype=bool)
    mask[ys, xs] = True
    mask_stack = np.broadcast_to(mask, (config.frames, h, w))

    records: list[ClipRecord] = []
    counter = 0
    for class_index in range(config.classes):
        label = FPV_O_CLASSES[class_index]
        for clip_index in range(config.clips_per_class):
            frames = _synth_clip(config, class_index, clip_index)
            clip_id = f"{label}_{clip_index:03d}"
            clip_path = out / f"{clip_id}.npy"
            write_clip(clip_path, frames, fps=config.fps)
            write_mask_file(mask_sidecar_path(clip_path), mask_stack)
            records.append(
                ClipRecord(
                    clip_id=clip_id,
                    path=str(clip_path.resolve()),
                    label=label,
                    subject_id=f"s{counter % config.subjects:02d}",
                    split="train",
                    variant="original",
                )
            )
            counter += 1
    records.sort(key=lambda r: r.clip_id)
    return DatasetManifest(records)


def calibration_split(
    manifest: DatasetManifest, fraction: float = 0.1, seed: int = 0
) -> tuple[DatasetManifest, DatasetManifest]:
    """Carve a small stratified calibration slice out of a training manifest.

    Returns (fit, calibration). Every class keeps at least one fit clip;
    classes with a single clip contribute nothing to calibration.
    """
    if not 0 < fraction < 1:
        raise ManifestError(f"fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    fit: list[ClipRecord] = []
    cal: list[ClipRecord] = []
    for label in sorted(manifest.by_label()):
        pool = sorted(manifest.by_label()[label], key=lambda r: (r.clip_id, r.variant))
        n = len(pool)
        take = 0 if n < 2 else min(max(1, int(math.floor(fraction * n))), n - 1)
        order = rng.permutation(n)
        picked = [pool[i] for i in order]
        cal.extend(picked[:take])
        fit.extend(picked[take:])
    fit.sort(key=lambda r: (r.clip_id, r.variant))
    cal.sort(key=lambda r: (r.clip_id, r.variant))
    return DatasetManifest(fit), DatasetManifest(cal)
