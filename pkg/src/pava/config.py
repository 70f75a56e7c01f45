"""JSON run configuration for the command-line tools.

A config file is a single JSON object with optional sections; every
section tolerates omission and rejects unknown keys, so typos fail
loudly instead of silently training with defaults.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

from .labels import LabelSpace
from .preprocess import SampleSpec
from .privacy import BlurParams
from .training import SchedulerConfig, TrainConfig

SECTIONS = ("labels", "backbone", "classifier", "train", "preprocess", "blur", "seed")


class ConfigError(ValueError):
    pass


def load_config(path: str | Path) -> dict:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: config root must be a JSON object")
    unknown = sorted(set(obj) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"{path}: unknown config sections {unknown}")
    return obj


def _section(config: Mapping[str, Any], name: str, allowed: tuple[str, ...]) -> dict:
    section = config.get(name, {})
    if not isinstance(section, Mapping):
        raise ConfigError(f"config section {name!r} must be an object")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown keys in config section {name!r}: {unknown}")
    return dict(section)


def label_space_from_config(config: Mapping[str, Any]) -> LabelSpace:
    names = config.get("labels")
    if names is None:
        return LabelSpace.fpv_o()
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise ConfigError("config section 'labels' must be a list of strings")
    return LabelSpace(tuple(names))


def backbone_from_config(config: Mapping[str, Any]) -> dict:
    section = _section(config, "backbone", ("name", "frozen", "input_resolution", "weights"))
    out = {
        "name": section.get("name", "tiny_test_backbone"),
        "frozen": bool(section.get("frozen", True)),
        "input_resolution": None,
        "weights": section.get("weights"),
    }
    res = section.get("input_resolution")
    if res is not None:
        if not (isinstance(res, list) and len(res) == 2):
            raise ConfigError("backbone.input_resolution must be [height, width]")
        out["input_resolution"] = (int(res[0]), int(res[1]))
    return out


def classifier_from_config(config: Mapping[str, Any], num_classes: int) -> dict:
    allowed = (
        "feature_dim",
        "lstm_hidden",
        "bidirectional",
        "attention",
        "attention_position",
        "n_frames",
    )
    section = _section(config, "classifier", allowed)
    out = {
        "feature_dim": int(section.get("feature_dim", 512)),
        "lstm_hidden": int(section.get("lstm_hidden", 1024)),
        "bidirectional": bool(section.get("bidirectional", True)),
        "num_classes": num_classes,
        "attention": bool(section.get("attention", True)),
        "attention_position": str(section.get("attention_position", "post_lstm")),
        "n_frames": int(section.get("n_frames", 40)),
    }
    return out


def train_from_config(config: Mapping[str, Any]) -> TrainConfig:
    allowed = (
        "epochs",
        "lr0",
        "per_class_in_batch",
        "hflip_prob",
        "patience",
        "factor",
        "weight_decay",
        "grad_clip",
        "seed",
    )
    section = _section(config, "train", allowed)
    seed = section.get("seed", config.get("seed", 0))
    scheduler = SchedulerConfig(
        patience=int(section.get("patience", 5)),
        factor=float(section.get("factor", 0.1)),
    )
    grad_clip = section.get("grad_clip")
    return TrainConfig(
        epochs=int(section.get("epochs", 20)),
        lr0=float(section.get("lr0", 0.001)),
        scheduler=scheduler,
        per_class_in_batch=int(section.get("per_class_in_batch", 2)),
        seed=int(seed),
        hflip_prob=float(section.get("hflip_prob", 0.5)),
        weight_decay=float(section.get("weight_decay", 0.0)),
        grad_clip=None if grad_clip is None else float(grad_clip),
    )


def preprocess_from_config(config: Mapping[str, Any], n_frames: int) -> dict:
    allowed = ("gamma_target", "channel_mean", "channel_std")
    section = _section(config, "preprocess", allowed)
    mean = section.get("channel_mean", [0.0, 0.0, 0.0])
    std = section.get("channel_std", [1.0, 1.0, 1.0])
    if not (isinstance(mean, list) and len(mean) == 3):
        raise ConfigError("preprocess.channel_mean must be a list of 3 numbers")
    if not (isinstance(std, list) and len(std) == 3):
        raise ConfigError("preprocess.channel_std must be a list of 3 numbers")
    return {
        "sample": SampleSpec(n_frames=n_frames, seed=int(config.get("seed", 0))),
        "channel_mean": tuple(float(v) for v in mean),
        "channel_std": tuple(float(v) for v in std),
        "gamma_target": float(section.get("gamma_target", 0.5)),
    }


def blur_from_config(config: Mapping[str, Any]) -> BlurParams:
    allowed = ("sigma", "kernel_radius", "mask_dilation")
    section = _section(config, "blur", allowed)
    radius = section.get("kernel_radius")
    return BlurParams(
        sigma=float(section.get("sigma", 12.0)),
        kernel_radius=None if radius is None else int(radius),
        mask_dilation=int(section.get("mask_dilation", 2)),
    )
