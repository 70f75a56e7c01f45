"""Balanced-batch training, plateau LR scheduling, and blurred fine-tuning.

Every batch holds exactly `per_class_in_batch` clips of every class;
minority classes are oversampled by cycling seeded permutations of their
clips, so coverage is maximally even. One epoch is
ceil(max_class_count / per_class_in_batch) batches, which shows each
majority-class clip about once per epoch.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .dataset import DatasetManifest
from .labels import LabelSpace
from .loader import ClipLoader
from .model import TrainedModel


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, batch: int, lr: float):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}, lr {lr:g}")
        self.epoch = epoch
        self.batch = batch
        self.lr = lr


@dataclass(frozen=True)
class SchedulerConfig:
    patience: int = 5
    factor: float = 0.1
    monitored: str = "val_loss"

    def __post_init__(self) -> None:
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0 < self.factor < 1:
            raise ValueError(f"factor must be in (0, 1), got {self.factor}")
        if self.monitored != "val_loss":
            raise ValueError(f"unsupported monitored quantity {self.monitored!r}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    lr0: float = 0.001
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    per_class_in_batch: int = 2
    seed: int = 0
    hflip_prob: float = 0.5
    weight_decay: float = 0.0
    grad_clip: float | None = None

    def __post_init__(self) -> None:
        # epochs == 0 is allowed so fine-tuning can be a checked no-op.
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if self.per_class_in_batch < 1:
            raise ValueError("per_class_in_batch must be >= 1")
        if not 0 <= self.hflip_prob <= 1:
            raise ValueError("hflip_prob must be in [0, 1]")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive when set")


class PlateauScheduler:
    """Multiply lr by `factor` after `patience` consecutive epochs without
    strict improvement of the monitored value; the counter resets after
    each step, so k*patience bad epochs yield exactly k steps."""

    def __init__(self, lr0: float, config: SchedulerConfig):
        self.lr = lr0
        self.config = config
        self.best = math.inf
        self.bad_epochs = 0
        self.steps = 0

    def observe(self, value: float) -> bool:
        if value < self.best:
            self.best = value
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs >= self.config.patience:
            self.lr *= self.config.factor
            self.bad_epochs = 0
            self.steps += 1
            return True
        return False


@dataclass(frozen=True)
class BalancedBatchPlan:
    batches: tuple[tuple[str, ...], ...]
    batch_labels: tuple[tuple[str, ...], ...]
    classes: tuple[str, ...]
    per_class_in_batch: int

    @property
    def batch_size(self) -> int:
        return len(self.classes) * self.per_class_in_batch

    def class_counts(self, batch_index: int) -> dict[str, int]:
        counts: dict[str, int] = {}
        for label in self.batch_labels[batch_index]:
            counts[label] = counts.get(label, 0) + 1
        return counts


def balanced_batches(
    manifest: DatasetManifest,
    per_class_in_batch: int,
    seed: int,
    label_space: LabelSpace | None = None,
) -> BalancedBatchPlan:
    """One epoch of batches, each holding exactly per_class_in_batch clips
    of every class. Deterministic under the seed."""
    groups = manifest.by_label()
    classes = label_space.names if label_space is not None else tuple(sorted(groups))
    for name in classes:
        if not groups.get(name):
            raise ValueError(f"class {name!r} has no clips in the manifest")
    k = per_class_in_batch
    max_count = max(len(groups[name]) for name in classes)
    n_batches = math.ceil(max_count / k)
    demand = n_batches * k
    per_class_sequences: dict[str, list[str]] = {}
    for index, name in enumerate(classes):
        ids = sorted(rec.clip_id for rec in groups[name])
        rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
        seq: list[str] = []
        while len(seq) < demand:
            seq.extend(ids[i] for i in rng.permutation(len(ids)))
        per_class_sequences[name] = seq[:demand]
    batches = []
    batch_labels = []
    for b in range(n_batches):
        ids = []
        labels = []
        for name in classes:
            ids.extend(per_class_sequences[name][b * k : (b + 1) * k])
            labels.extend([name] * k)
        batches.append(tuple(ids))
        batch_labels.append(tuple(labels))
    return BalancedBatchPlan(
        batches=tuple(batches),
        batch_labels=tuple(batch_labels),
        classes=tuple(classes),
        per_class_in_batch=k,
    )


def cross_entropy(probabilities: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean of -ln p[label] over the batch, with p clamped below at 1e-12.

    Takes probabilities (the model emits softmax output), not logits.
    """
    if probabilities.ndim == 1:
        probabilities = probabilities.unsqueeze(0)
        labels = labels.reshape(1)
    picked = probabilities.gather(1, labels.reshape(-1, 1)).squeeze(1)
    return -torch.log(picked.clamp_min(1e-12)).mean()


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float
    lr: float


HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "val_acc", "lr")


def write_history(path: str | Path, history: Sequence[EpochStats]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow(
                [row.epoch, f"{row.train_loss:.10g}", f"{row.val_loss:.10g}", f"{row.val_acc:.10g}", f"{row.lr:.10g}"]
            )


def _entropy_int(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _index_map(classes: Sequence[str]) -> dict[str, int]:
    return {name: i for i, name in enumerate(classes)}


def _evaluate(
    module, manifest: DatasetManifest, loader: ClipLoader, index_of: dict[str, int], batch_size: int = 16
) -> tuple[float, float]:
    """(mean loss, accuracy percent) over a manifest, eval mode, no flips."""
    module.eval()
    records = list(manifest)
    losses = []
    correct = 0
    with torch.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            x = loader.batch(chunk)
            y = torch.tensor([index_of[r.label] for r in chunk], dtype=torch.long)
            probs = module(x)
            picked = probs.gather(1, y.reshape(-1, 1)).squeeze(1)
            losses.extend((-torch.log(picked.clamp_min(1e-12))).tolist())
            correct += int((probs.argmax(dim=1) == y).sum())
    return float(np.mean(losses)), 100.0 * correct / len(records)


def _train_loop(
    model: TrainedModel,
    train_manifest: DatasetManifest,
    val_manifest: DatasetManifest,
    cfg: TrainConfig,
    loader: ClipLoader,
    label_space: LabelSpace | None,
    progress=None,
) -> list[EpochStats]:
    if len(train_manifest) == 0 or len(val_manifest) == 0:
        raise ValueError("train and validation manifests must be nonempty")
    classes = label_space.names if label_space is not None else tuple(sorted(train_manifest.by_label()))
    if len(classes) != model.config.num_classes:
        raise ValueError(
            f"manifest has {len(classes)} classes but the model is configured for {model.config.num_classes}"
        )
    index_of = _index_map(classes)
    by_id = {rec.clip_id: rec for rec in train_manifest}
    module = model.module
    torch.manual_seed(cfg.seed)
    optimizer = torch.optim.Adam(
        (p for p in module.parameters() if p.requires_grad),
        lr=cfg.lr0,
        weight_decay=cfg.weight_decay,
    )
    scheduler = PlateauScheduler(cfg.lr0, cfg.scheduler)
    space = label_space if label_space is not None else LabelSpace(classes)
    history: list[EpochStats] = []
    best_key: tuple[float, float] | None = None
    best_state = None
    for epoch in range(cfg.epochs):
        plan = balanced_batches(train_manifest, cfg.per_class_in_batch, _entropy_int(cfg.seed, 1, epoch), space)
        module.train()
        epoch_losses = []
        for b, (ids, labels) in enumerate(zip(plan.batches, plan.batch_labels)):
            flip_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2, epoch, b]))
            flips = [bool(flip_rng.random() < cfg.hflip_prob) for _ in ids]
            x = loader.batch([by_id[i] for i in ids], flips)
            y = torch.tensor([index_of[lab] for lab in labels], dtype=torch.long)
            probs = module(x)
            loss = cross_entropy(probs, y)
            if not torch.isfinite(loss):
                raise TrainingDiverged(epoch, b, scheduler.lr)
            optimizer.zero_grad()
            loss.backward()
            if cfg.grad_clip is not None:
                torch.nn.utils.clip_grad_norm_(
                    (p for p in module.parameters() if p.requires_grad), cfg.grad_clip
                )
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
        lr_used = scheduler.lr
        val_loss, val_acc = _evaluate(module, val_manifest, loader, index_of)
        stats = EpochStats(epoch, float(np.mean(epoch_losses)), val_loss, val_acc, lr_used)
        history.append(stats)
        if progress is not None:
            progress(stats)
        # Best checkpoint by validation accuracy, ties broken by lower loss.
        key = (val_acc, -val_loss)
        if best_key is None or key > best_key:
            best_key = key
            best_state = {k: v.detach().clone() for k, v in module.state_dict().items()}
        if scheduler.observe(val_loss):
            for group in optimizer.param_groups:
                group["lr"] = scheduler.lr
    if best_state is not None:
        module.load_state_dict(best_state)
    return history


def train(
    model: TrainedModel,
    train_manifest: DatasetManifest,
    val_manifest: DatasetManifest,
    cfg: TrainConfig,
    loader: ClipLoader,
    label_space: LabelSpace | None = None,
    progress=None,
) -> tuple[TrainedModel, list[EpochStats]]:
    """Train in place from the model's current parameters; returns the model
    loaded with its best-validation checkpoint plus per-epoch history."""
    history = _train_loop(model, train_manifest, val_manifest, cfg, loader, label_space, progress)
    model.provenance["trained_on"] = train_manifest.sub_dataset
    return model, history


def fine_tune(
    model: TrainedModel,
    blurred_manifest: DatasetManifest,
    val_manifest: DatasetManifest,
    cfg: TrainConfig,
    loader: ClipLoader,
    label_space: LabelSpace | None = None,
    progress=None,
) -> tuple[TrainedModel, list[EpochStats]]:
    """Continue training a model that was trained on original video using
    redacted (blurred) clips. The input model is left untouched."""
    if model.provenance.get("trained_on") != "original":
        raise ValueError(
            f"fine-tuning expects a model trained on the original sub-dataset, "
            f"got provenance {model.provenance!r}"
        )
    tuned = model.clone()
    history = _train_loop(tuned, blurred_manifest, val_manifest, cfg, loader, label_space, progress)
    tuned.provenance["fine_tuned_on"] = blurred_manifest.sub_dataset
    return tuned, history
