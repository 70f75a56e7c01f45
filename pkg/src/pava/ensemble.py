"""F1-weighted ensembling of activity classifiers.

Member weights come from per-class F1 on a held-out calibration slice:
w[m][c] = f1[m][c] / sum_k f1[k][c]. Combination is either a weighted
soft vote (weight the probability vectors, sum over members, renormalize)
or a hard per-class pick (for each class take the probability from the
member with the largest weight for that class, then renormalize).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import DatasetManifest
from .labels import LabelSpace
from .loader import ClipLoader
from .metrics import evaluate, per_class_f1
from .model import TrainedModel

ENSEMBLE_FORMAT = "pava-ensemble"
ENSEMBLE_VERSION = 1
COMBINE_MODES = ("soft_f1_weighted", "hard_per_class")


class EnsembleError(ValueError):
    pass


@dataclass(frozen=True)
class ReferenceMember:
    """Documented full-scale ensemble member (not constructed at desk scale)."""

    backbone: str
    input_resolution: tuple[int, int]
    attention: bool
    accuracy_percent: float


REFERENCE_MEMBERS = (
    ReferenceMember("resnext101", (248, 248), False, 75.92),
    ReferenceMember("densenet121", (512, 512), False, 74.87),
    ReferenceMember("wide_resnet101", (324, 324), False, 79.84),
    ReferenceMember("wide_resnet101", (324, 324), True, 75.39),
)


def compute_weights(f1_matrix: np.ndarray, labels: Sequence[str] | None = None) -> np.ndarray:
    """Column-normalize a (members, classes) F1 matrix.

    Every column of the result sums to 1. A class on which every member
    scored zero has no usable signal and is rejected by name.
    """
    f1 = np.asarray(f1_matrix, dtype=np.float64)
    if f1.ndim != 2:
        raise EnsembleError(f"f1_matrix must be 2-D, got shape {f1.shape}")
    if ((f1 < 0.0) | (f1 > 1.0)).any():
        raise EnsembleError("F1 values must lie in [0, 1]")
    col = f1.sum(axis=0)
    zero = np.flatnonzero(col == 0.0)
    if zero.size:
        c = int(zero[0])
        name = labels[c] if labels is not None else f"class {c}"
        raise EnsembleError(f"no member has nonzero F1 for {name}; cannot weight")
    return f1 / col


def combine(
    per_member_probabilities: np.ndarray,
    weights: np.ndarray,
    mode: str = "soft_f1_weighted",
) -> np.ndarray:
    """Fuse a (members, classes) probability stack into one distribution."""
    probs = np.asarray(per_member_probabilities, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if probs.shape != w.shape:
        raise EnsembleError(f"probabilities {probs.shape} and weights {w.shape} must match")
    if mode == "soft_f1_weighted":
        fused = (w * probs).sum(axis=0)
    elif mode == "hard_per_class":
        pick = w.argmax(axis=0)
        fused = probs[pick, np.arange(probs.shape[1])]
    else:
        raise EnsembleError(f"unknown combine mode {mode!r}")
    total = fused.sum()
    if total <= 0.0:
        raise EnsembleError("fused probabilities sum to zero")
    return fused / total


@dataclass(frozen=True)
class EnsembleSpec:
    """Serializable description of a calibrated ensemble."""

    member_paths: tuple[str, ...]
    member_roles: tuple[str, ...]
    f1_matrix: np.ndarray
    mode: str
    labels: tuple[str, ...]
    version: int = field(default=ENSEMBLE_VERSION)

    def __post_init__(self) -> None:
        if len(self.member_paths) != len(self.member_roles):
            raise EnsembleError("member_paths and member_roles must align")
        if self.f1_matrix.shape != (len(self.member_paths), len(self.labels)):
            raise EnsembleError(
                f"f1_matrix shape {self.f1_matrix.shape} does not match "
                f"{len(self.member_paths)} members x {len(self.labels)} classes"
            )
        if self.mode not in COMBINE_MODES:
            raise EnsembleError(f"unknown combine mode {self.mode!r}")

    @property
    def weights(self) -> np.ndarray:
        return compute_weights(self.f1_matrix, self.labels)


def save_spec(spec: EnsembleSpec, path: str | Path) -> None:
    path = Path(path)
    base = path.parent.resolve()
    paths = []
    for p in spec.member_paths:
        q = Path(p)
        if q.is_absolute():
            try:
                q = q.resolve().relative_to(base)
            except ValueError:
                pass
        paths.append(q.as_posix())
    obj = {
        "format": ENSEMBLE_FORMAT,
        "version": spec.version,
        "member_paths": paths,
        "member_roles": list(spec.member_roles),
        "f1_matrix": spec.f1_matrix.tolist(),
        "mode": spec.mode,
        "labels": list(spec.labels),
    }
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_spec(path: str | Path) -> EnsembleSpec:
    path = Path(path)
    obj = json.loads(path.read_text(encoding="utf-8"))
    if obj.get("format") != ENSEMBLE_FORMAT:
        raise EnsembleError(f"{path}: not a {ENSEMBLE_FORMAT} file")
    if obj.get("version") != ENSEMBLE_VERSION:
        raise EnsembleError(f"{path}: unsupported version {obj.get('version')!r}")
    base = path.parent.resolve()
    member_paths = tuple(
        str(q if (q := Path(p)).is_absolute() else base / q) for p in obj["member_paths"]
    )
    return EnsembleSpec(
        member_paths=member_paths,
        member_roles=tuple(obj["member_roles"]),
        f1_matrix=np.asarray(obj["f1_matrix"], dtype=np.float64),
        mode=obj["mode"],
        labels=tuple(obj["labels"]),
        version=obj["version"],
    )


def calibrate_f1_matrix(
    members: Sequence[tuple[str, TrainedModel]],
    manifest: DatasetManifest,
    loader_for: "callable",
    label_space: LabelSpace,
) -> np.ndarray:
    """Per-member, per-class F1 on the calibration manifest.

    loader_for(model) must return a ClipLoader matched to that member's
    input resolution and frame count.
    """
    from .predict import ModelPredictor

    rows = []
    for path, model in members:
        loader = loader_for(model)
        if not isinstance(loader, ClipLoader):
            raise EnsembleError(f"loader_for returned {type(loader).__name__}, not ClipLoader")
        try:
            _, cm = evaluate(ModelPredictor(model, loader), manifest, label_space)
        except Exception as exc:
            raise EnsembleError(f"calibration failed for member {path}: {exc}") from exc
        rows.append(per_class_f1(cm))
    return np.stack(rows, axis=0)


def build_ensemble_spec(
    members: Sequence[tuple[str, TrainedModel]],
    calibration_manifest: DatasetManifest,
    loader_for: "callable",
    label_space: LabelSpace,
    mode: str = "soft_f1_weighted",
    roles: Sequence[str] | None = None,
) -> EnsembleSpec:
    if not members:
        raise EnsembleError("ensemble needs at least one member")
    f1 = calibrate_f1_matrix(members, calibration_manifest, loader_for, label_space)
    compute_weights(f1, label_space.names)  # reject unweightable classes early
    if roles is None:
        roles = tuple("member" for _ in members)
    return EnsembleSpec(
        member_paths=tuple(path for path, _ in members),
        member_roles=tuple(roles),
        f1_matrix=f1,
        mode=mode,
        labels=tuple(label_space.names),
    )


def build_final_ensemble(
    original_members: Sequence[tuple[str, TrainedModel]],
    fine_tuned_members: Sequence[tuple[str, TrainedModel]],
    calibration_manifest: DatasetManifest,
    loader_for: "callable",
    label_space: LabelSpace,
    mode: str = "soft_f1_weighted",
) -> EnsembleSpec:
    """The deployed configuration: four original-video models plus their
    four fine-tuned (redacted-video) counterparts, calibrated together."""
    if len(original_members) != 4 or len(fine_tuned_members) != 4:
        raise EnsembleError(
            f"final ensemble takes 4 original + 4 fine-tuned members, got "
            f"{len(original_members)} + {len(fine_tuned_members)}"
        )
    for path, model in original_members:
        if model.provenance.get("trained_on") != "original":
            raise EnsembleError(f"{path}: expected a model trained on original video")
        if "fine_tuned_on" in model.provenance:
            raise EnsembleError(f"{path}: fine-tuned model passed as an original member")
    for path, model in fine_tuned_members:
        if "fine_tuned_on" not in model.provenance:
            raise EnsembleError(f"{path}: expected a fine-tuned model")
    members = list(original_members) + list(fine_tuned_members)
    roles = tuple(["original"] * 4 + ["fine_tuned"] * 4)
    return build_ensemble_spec(
        members, calibration_manifest, loader_for, label_space, mode=mode, roles=roles
    )
