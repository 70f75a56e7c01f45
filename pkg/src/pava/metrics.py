"""Confusion matrices, per-class and macro metrics, and report files.

Conventions: confusion-matrix rows are true labels, columns predictions;
precision_c = cm[c][c] / column_sum, recall_c = cm[c][c] / row_sum,
f1_c = 2pr / (p + r); a zero denominator yields 0. Macro metrics are the
unweighted mean across classes, and the reported spreads are the
across-class standard deviation (population, ddof=0).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .dataset import ClipRecord, DatasetManifest
from .labels import LabelSpace
from .video import ClipReadError

METRICS_FORMAT = "pava-metrics"
METRICS_VERSION = 1


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        c = len(self.labels)
        if self.counts.shape != (c, c):
            raise ValueError(f"counts must be ({c}, {c}), got {self.counts.shape}")
        if self.counts.dtype.kind not in "iu" or (self.counts < 0).any():
            raise ValueError("counts must be nonnegative integers")

    @classmethod
    def from_pairs(
        cls, true_indices: Sequence[int], pred_indices: Sequence[int], labels: Sequence[str]
    ) -> "ConfusionMatrix":
        c = len(labels)
        counts = np.zeros((c, c), dtype=np.int64)
        for t, p in zip(true_indices, pred_indices):
            counts[t, p] += 1
        return cls(counts, tuple(labels))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy_percent(self) -> float:
        total = self.total
        return 100.0 * float(np.trace(self.counts)) / total if total else 0.0


def precision_recall(cm: ConfusionMatrix) -> tuple[np.ndarray, np.ndarray]:
    counts = cm.counts.astype(np.float64)
    diag = np.diag(counts)
    col = counts.sum(axis=0)
    row = counts.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(col > 0, diag / col, 0.0)
        recall = np.where(row > 0, diag / row, 0.0)
    return precision, recall


def per_class_f1(cm: ConfusionMatrix) -> np.ndarray:
    precision, recall = precision_recall(cm)
    denom = precision + recall
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, 2.0 * precision * recall / denom, 0.0)


@dataclass(frozen=True)
class MetricsReport:
    sub_dataset: str
    model_id: str
    accuracy_percent: float
    per_class: dict[str, dict[str, float]]
    macro: dict[str, float]
    n_evaluated: int
    n_failed: int
    failures: tuple[str, ...]

    def to_dict(self, cm: ConfusionMatrix | None = None) -> dict:
        out = {
            "format": METRICS_FORMAT,
            "version": METRICS_VERSION,
            "sub_dataset": self.sub_dataset,
            "model_id": self.model_id,
            "accuracy_percent": self.accuracy_percent,
            "macro": dict(self.macro),
            "per_class": {k: dict(v) for k, v in self.per_class.items()},
            "n_evaluated": self.n_evaluated,
            "n_failed": self.n_failed,
            "failures": list(self.failures),
        }
        if cm is not None:
            out["labels"] = list(cm.labels)
            out["confusion"] = cm.counts.tolist()
        return out


def report_from_confusion(
    cm: ConfusionMatrix,
    *,
    sub_dataset: str = "original",
    model_id: str = "model",
    n_failed: int = 0,
    failures: Sequence[str] = (),
) -> MetricsReport:
    precision, recall = precision_recall(cm)
    f1 = per_class_f1(cm)
    per_class = {
        label: {
            "precision": float(precision[i]),
            "recall": float(recall[i]),
            "f1": float(f1[i]),
        }
        for i, label in enumerate(cm.labels)
    }
    macro = {
        "precision": float(precision.mean()),
        "recall": float(recall.mean()),
        "f1": float(f1.mean()),
        "precision_std": float(precision.std()),
        "recall_std": float(recall.std()),
        "f1_std": float(f1.std()),
    }
    return MetricsReport(
        sub_dataset=sub_dataset,
        model_id=model_id,
        accuracy_percent=cm.accuracy_percent,
        per_class=per_class,
        macro=macro,
        n_evaluated=cm.total,
        n_failed=n_failed,
        failures=tuple(failures),
    )


def evaluate(
    predictor: Callable[[ClipRecord], np.ndarray],
    test_manifest: DatasetManifest,
    label_space: LabelSpace,
    *,
    model_id: str = "model",
    sub_dataset: str | None = None,
    progress=None,
) -> tuple[MetricsReport, ConfusionMatrix]:
    """Argmax decisions over a manifest. Clip decode failures are recorded,
    excluded from the matrix, and counted in the report metadata."""
    true_idx: list[int] = []
    pred_idx: list[int] = []
    failures: list[str] = []
    for i, record in enumerate(test_manifest):
        try:
            probs = np.asarray(predictor(record))
        except (ClipReadError, OSError) as exc:
            failures.append(f"{record.clip_id}: {exc}")
            continue
        if probs.shape != (len(label_space),):
            raise ValueError(
                f"predictor returned shape {probs.shape}, expected ({len(label_space)},)"
            )
        true_idx.append(label_space.index_of(record.label))
        pred_idx.append(int(probs.argmax()))
        if progress is not None:
            progress(i + 1, len(test_manifest))
    cm = ConfusionMatrix.from_pairs(true_idx, pred_idx, label_space.names)
    report = report_from_confusion(
        cm,
        sub_dataset=sub_dataset if sub_dataset is not None else test_manifest.sub_dataset,
        model_id=model_id,
        n_failed=len(failures),
        failures=failures,
    )
    return report, cm


def load_report(path: str | Path) -> tuple[MetricsReport, ConfusionMatrix | None]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if obj.get("format") != METRICS_FORMAT:
        raise ValueError(f"{path}: not a {METRICS_FORMAT} file")
    if obj.get("version") != METRICS_VERSION:
        raise ValueError(f"{path}: unsupported version {obj.get('version')!r}")
    report = MetricsReport(
        sub_dataset=obj["sub_dataset"],
        model_id=obj["model_id"],
        accuracy_percent=obj["accuracy_percent"],
        per_class={k: dict(v) for k, v in obj["per_class"].items()},
        macro=dict(obj["macro"]),
        n_evaluated=obj["n_evaluated"],
        n_failed=obj["n_failed"],
        failures=tuple(obj["failures"]),
    )
    cm = None
    if "confusion" in obj:
        cm = ConfusionMatrix(np.asarray(obj["confusion"], dtype=np.int64), tuple(obj["labels"]))
    return report, cm


def report_emit(
    report: MetricsReport,
    cm: ConfusionMatrix,
    out_dir: str | Path,
    blurred: MetricsReport | None = None,
) -> list[Path]:
    """Write metrics.json, confusion.csv, and f1_by_class.csv.

    When a paired blurred-run report is supplied, the F1 file carries
    f1_original/f1_blurred columns suitable for bar plotting.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    metrics_path = out / "metrics.json"
    metrics_path.write_text(
        json.dumps(report.to_dict(cm), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    written.append(metrics_path)

    confusion_path = out / "confusion.csv"
    with open(confusion_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label"] + list(cm.labels))
        for i, label in enumerate(cm.labels):
            writer.writerow([label] + [int(v) for v in cm.counts[i]])
    written.append(confusion_path)

    f1_path = out / "f1_by_class.csv"
    with open(f1_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if blurred is None:
            writer.writerow(["label", "f1"])
            for label in cm.labels:
                writer.writerow([label, f"{report.per_class[label]['f1']:.10g}"])
        else:
            writer.writerow(["label", "f1_original", "f1_blurred"])
            for label in cm.labels:
                writer.writerow(
                    [
                        label,
                        f"{report.per_class[label]['f1']:.10g}",
                        f"{blurred.per_class[label]['f1']:.10g}",
                    ]
                )
    written.append(f1_path)
    return written
