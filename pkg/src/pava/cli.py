"""Command-line entry point.

Subcommands cover the full pipeline: synthesize or ingest a dataset,
redact sensitive regions, train and fine-tune classifiers, calibrate an
ensemble, predict, evaluate, and re-emit report files. Every artifact
lands under the --out directory and repeated runs with the same inputs
and seed produce byte-identical outputs.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .config import (
    backbone_from_config,
    blur_from_config,
    classifier_from_config,
    label_space_from_config,
    load_config,
    preprocess_from_config,
    train_from_config,
)
from .dataset import ClipRecord, DatasetManifest, SynthConfig, ingest, synth_dataset
from .labels import LabelSpace

PROG = "pava"


def _status(**fields) -> None:
    print(" ".join(f"{k}={v}" for k, v in fields.items()), file=sys.stderr, flush=True)


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1; argparse's default is 2, reserved here for runtime failures
    def error(self, message: str):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _resolution(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")


def _load_cfg(args) -> dict:
    return load_config(args.config) if getattr(args, "config", None) else {}


def _resolve_labels(cfg: dict, args, manifest: DatasetManifest | None = None) -> LabelSpace:
    if getattr(args, "labels", None):
        return LabelSpace(tuple(args.labels.split(",")))
    if "labels" in cfg:
        return label_space_from_config(cfg)
    if manifest is not None:
        return LabelSpace(tuple(sorted(set(r.label for r in manifest))))
    return LabelSpace.fpv_o()


# --------------------------------------------------------------------------
# dataset commands


def _cmd_synth(args) -> int:
    out = Path(args.out)
    config = SynthConfig(
        classes=args.classes,
        clips_per_class=args.clips_per_class,
        frames=args.frames,
        resolution=args.resolution,
        seed=args.seed,
        subjects=args.subjects,
    )
    manifest = synth_dataset(config, out / "clips")
    manifest.save(out / "manifest.jsonl")
    _status(command="synth", clips=len(manifest), manifest=out / "manifest.jsonl")
    return 0


def _cmd_ingest(args) -> int:
    root = Path(args.root)
    if args.label_map:
        label_map = json.loads(Path(args.label_map).read_text(encoding="utf-8"))
    else:
        label_map = {p.name: p.name for p in sorted(root.iterdir()) if p.is_dir()}
    exclude = ()
    if args.exclude:
        lines = Path(args.exclude).read_text(encoding="utf-8").splitlines()
        exclude = tuple(line.strip() for line in lines if line.strip())
    manifest, errors = ingest(
        root,
        label_map,
        exclude=exclude,
        subject_pattern=args.subject_pattern,
        split=args.split,
    )
    for err in errors:
        _status(command="ingest", error=f"{err.path}: {err.reason}")
    if not len(manifest):
        print("error: ingest produced an empty manifest", file=sys.stderr)
        return 2
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest.save(out / "manifest.jsonl")
    _status(command="ingest", clips=len(manifest), skipped=len(errors))
    return 0


# --------------------------------------------------------------------------
# redaction


def _make_backend(args, clip_path: Path, detections_root: Path | None):
    from . import privacy

    if args.backend == "fake":
        return privacy.GroundTruthBackend.for_clip(clip_path)
    if args.backend == "file":
        if detections_root is None:
            raise ValueError("--detections is required with --backend file")
        path = detections_root
        if path.is_dir():
            path = path / (clip_path.stem + ".jsonl")
        return privacy.DetectionFileBackend(path)
    if args.backend == "torchvision":
        return privacy.TorchMaskRCNNBackend(model_path=args.model_file)
    raise ValueError(f"unknown backend {args.backend!r}")


def _redact_one(args, clip_path: Path, out_path: Path, sensitive, params, detections_root):
    from .preprocess import FrameSequence
    from .privacy import redact_clip
    from .video import read_clip, write_clip

    frames, fps = read_clip(clip_path)
    seq = FrameSequence.from_uint8(frames, fps)
    backend = _make_backend(args, clip_path, detections_root)
    result = redact_clip(seq, backend, sensitive, params, fail_open=args.fail_open)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_clip(out_path, result.sequence.to_uint8(), fps=fps)
    for err in result.errors:
        _status(command="redact", clip=clip_path.name, frame=err.frame_index, error=err.reason)
    return result


def _cmd_redact(args) -> int:
    from .privacy import SensitiveClassSet, anomaly_frame_count
    from .video import ARRAY_SUFFIXES

    cfg = _load_cfg(args)
    params = blur_from_config(cfg)
    if args.sigma is not None:
        params = type(params)(args.sigma, params.kernel_radius, params.mask_dilation)
    if args.dilation is not None:
        params = type(params)(params.sigma, params.kernel_radius, args.dilation)
    sensitive = SensitiveClassSet(confidence_threshold=args.threshold)
    detections_root = Path(args.detections) if args.detections else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    in_path = Path(getattr(args, "in"))
    per_clip: dict[str, dict] = {}
    totals = {th: [0, 0] for th in (5, 10)}

    def note(clip_id: str, presence) -> None:
        entry = {}
        for th in (5, 10):
            report = anomaly_frame_count(presence, window=args.window, threshold=th)
            entry[str(th)] = {
                "anomaly_frame_count": report.anomaly_frame_count,
                "total_frames": report.total_frames,
                "accuracy_percent": report.accuracy_percent,
            }
            totals[th][0] += report.anomaly_frame_count
            totals[th][1] += report.total_frames
        per_clip[clip_id] = entry

    if in_path.suffix == ".jsonl":
        manifest = DatasetManifest.load(in_path)
        records = []
        for record in manifest:
            src = Path(record.path)
            suffix = ".npy" if src.suffix in ARRAY_SUFFIXES else ".avi"
            dst = (out / "clips" / record.clip_id).with_suffix(suffix)
            result = _redact_one(args, src, dst, sensitive, params, detections_root)
            note(record.clip_id, result.presence)
            records.append(
                ClipRecord(
                    clip_id=record.clip_id,
                    path=str(dst.resolve()),
                    label=record.label,
                    subject_id=record.subject_id,
                    split=record.split,
                    variant="blurred",
                )
            )
            _status(command="redact", clip=record.clip_id, frames=result.sequence.n_frames)
        DatasetManifest(records).save(out / "manifest.jsonl")
    else:
        suffix = ".npy" if in_path.suffix in ARRAY_SUFFIXES else ".avi"
        dst = (out / in_path.stem).with_suffix(suffix)
        result = _redact_one(args, in_path, dst, sensitive, params, detections_root)
        note(in_path.stem, result.presence)
        _status(command="redact", clip=in_path.name, frames=result.sequence.n_frames)

    anomaly = {
        "window": args.window,
        "per_clip": per_clip,
        "aggregate": {
            str(th): {
                "anomaly_frame_count": flagged,
                "total_frames": total,
                "accuracy_percent": (100.0 * flagged / total) if total else 0.0,
            }
            for th, (flagged, total) in totals.items()
        },
    }
    (out / "anomaly.json").write_text(
        json.dumps(anomaly, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return 0


# --------------------------------------------------------------------------
# training


def _build_loader(cfg: dict, n_frames: int, resolution: tuple[int, int]):
    from .loader import ClipLoader

    pre = preprocess_from_config(cfg, n_frames)
    return ClipLoader(
        sample=pre["sample"],
        resolution=resolution,
        channel_mean=pre["channel_mean"],
        channel_std=pre["channel_std"],
        gamma_target=pre["gamma_target"],
    )


def _train_val(args, manifest: DatasetManifest) -> tuple[DatasetManifest, DatasetManifest]:
    train_part = manifest.filter(split="train")
    if not len(train_part):
        train_part = manifest
    if args.val_manifest:
        return train_part, DatasetManifest.load(args.val_manifest)
    val_part = manifest.filter(split="test")
    return train_part, (val_part if len(val_part) else train_part)


def _cmd_train(args) -> int:
    from .model import ClassifierConfig, backbone_spec, new_model, save_checkpoint
    from .training import train, write_history

    cfg = _load_cfg(args)
    manifest = DatasetManifest.load(args.manifest)
    train_part, val_part = _train_val(args, manifest)
    labels = _resolve_labels(cfg, args, train_part)

    backbone = backbone_from_config(cfg)
    if args.backbone:
        backbone["name"] = args.backbone
    if args.resolution:
        backbone["input_resolution"] = args.resolution
    spec = backbone_spec(backbone["name"], backbone["frozen"], backbone["input_resolution"])
    model_cfg = ClassifierConfig(**classifier_from_config(cfg, num_classes=len(labels)))
    tcfg = train_from_config(cfg)
    if args.epochs is not None:
        tcfg = type(tcfg)(**{**tcfg.__dict__, "epochs": args.epochs})
    if args.seed is not None:
        tcfg = type(tcfg)(**{**tcfg.__dict__, "seed": args.seed})

    model = new_model(spec, model_cfg, seed=tcfg.seed, backbone_weights=backbone["weights"])
    loader = _build_loader(cfg, model_cfg.n_frames, spec.input_resolution)

    def progress(stats) -> None:
        _status(
            command="train",
            epoch=stats.epoch,
            train_loss=f"{stats.train_loss:.6f}",
            val_loss=f"{stats.val_loss:.6f}",
            val_acc=f"{stats.val_acc:.2f}",
            lr=stats.lr,
        )

    model, history = train(model, train_part, val_part, tcfg, loader, labels, progress)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "model.ckpt", model)
    write_history(out / "history.csv", history)
    _status(command="train", checkpoint=out / "model.ckpt", epochs=len(history))
    return 0


def _cmd_finetune(args) -> int:
    from .model import load_checkpoint, save_checkpoint
    from .training import fine_tune, write_history

    cfg = _load_cfg(args)
    manifest = DatasetManifest.load(args.manifest)
    train_part, val_part = _train_val(args, manifest)
    labels = _resolve_labels(cfg, args, train_part)

    model = load_checkpoint(args.model)
    tcfg = train_from_config(cfg)
    if args.epochs is not None:
        tcfg = type(tcfg)(**{**tcfg.__dict__, "epochs": args.epochs})
    if args.seed is not None:
        tcfg = type(tcfg)(**{**tcfg.__dict__, "seed": args.seed})
    loader = _build_loader(cfg, model.config.n_frames, model.spec.input_resolution)

    def progress(stats) -> None:
        _status(
            command="finetune",
            epoch=stats.epoch,
            train_loss=f"{stats.train_loss:.6f}",
            val_loss=f"{stats.val_loss:.6f}",
            val_acc=f"{stats.val_acc:.2f}",
            lr=stats.lr,
        )

    tuned, history = fine_tune(model, train_part, val_part, tcfg, loader, labels, progress)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "model.ckpt", tuned)
    write_history(out / "history.csv", history)
    _status(command="finetune", checkpoint=out / "model.ckpt", epochs=len(history))
    return 0


# --------------------------------------------------------------------------
# ensemble / prediction / evaluation


def _cmd_ensemble_build(args) -> int:
    from .ensemble import build_ensemble_spec, build_final_ensemble, save_spec
    from .model import load_checkpoint
    from .predict import loader_for_model
    from .preprocess import SampleSpec

    cfg = _load_cfg(args)
    manifest = DatasetManifest.load(args.calibration)
    labels = _resolve_labels(cfg, args, manifest)
    pre = preprocess_from_config(cfg, n_frames=40)

    def loader_for(model):
        return loader_for_model(
            model,
            SampleSpec(n_frames=model.config.n_frames, seed=pre["sample"].seed),
            pre["channel_mean"],
            pre["channel_std"],
            pre["gamma_target"],
        )

    # Checkpoint paths go into the spec file, whose relative paths resolve
    # against the spec's own directory; absolutize CWD-relative arguments.
    def absolute(paths):
        return [str(Path(p).resolve()) for p in paths or []]

    if args.original or args.fine_tuned:
        original = [(p, load_checkpoint(p)) for p in absolute(args.original)]
        tuned = [(p, load_checkpoint(p)) for p in absolute(args.fine_tuned)]
        spec = build_final_ensemble(original, tuned, manifest, loader_for, labels, mode=args.mode)
    elif args.member:
        members = [(p, load_checkpoint(p)) for p in absolute(args.member)]
        spec = build_ensemble_spec(members, manifest, loader_for, labels, mode=args.mode)
    else:
        raise ValueError("supply either --member or --original/--fine-tuned checkpoints")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_spec(spec, out / "ensemble.json")
    _status(command="ensemble-build", members=len(spec.member_paths), spec=out / "ensemble.json")
    return 0


def _load_predictor(args, cfg: dict):
    from .ensemble import load_spec
    from .model import load_checkpoint
    from .predict import ModelPredictor, load_ensemble, loader_for_model
    from .preprocess import SampleSpec

    pre = preprocess_from_config(cfg, n_frames=40)
    sample = SampleSpec(n_frames=40, seed=pre["sample"].seed)
    if getattr(args, "ensemble", None):
        spec = load_spec(args.ensemble)
        predictor = load_ensemble(
            spec, sample, pre["channel_mean"], pre["channel_std"], pre["gamma_target"]
        )
        return predictor, LabelSpace(spec.labels)
    model = load_checkpoint(args.model)
    if getattr(args, "labels", None):
        labels = LabelSpace(tuple(args.labels.split(",")))
    elif "labels" in cfg:
        labels = label_space_from_config(cfg)
    else:
        labels = LabelSpace.first(model.config.num_classes)
    if len(labels) != model.config.num_classes:
        raise ValueError(
            f"model predicts {model.config.num_classes} classes but {len(labels)} labels given"
        )
    loader = loader_for_model(
        model, sample, pre["channel_mean"], pre["channel_std"], pre["gamma_target"]
    )
    return ModelPredictor(model, loader), labels


def _cmd_predict(args) -> int:
    cfg = _load_cfg(args)
    predictor, labels = _load_predictor(args, cfg)

    in_path = Path(getattr(args, "in"))
    if in_path.suffix == ".jsonl":
        records = list(DatasetManifest.load(in_path))
    else:
        records = [
            ClipRecord(
                clip_id=in_path.stem,
                path=str(in_path.resolve()),
                label=labels[0],
                subject_id=in_path.stem,
            )
        ]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pred_path = out / "predictions.csv"
    with open(pred_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["clip_id", "prediction", "confidence"] + [f"p_{n}" for n in labels])
        for record in records:
            probs = predictor(record)
            k = int(probs.argmax())
            writer.writerow(
                [record.clip_id, labels[k], f"{probs[k]:.10g}"]
                + [f"{p:.10g}" for p in probs]
            )
    _status(command="predict", clips=len(records), predictions=pred_path)
    return 0


def _cmd_evaluate(args) -> int:
    from .metrics import evaluate, report_emit

    cfg = _load_cfg(args)
    predictor, labels = _load_predictor(args, cfg)
    manifest = DatasetManifest.load(args.manifest)
    model_id = args.model_id or (
        "ensemble" if getattr(args, "ensemble", None) else Path(args.model).stem
    )
    report, cm = evaluate(
        predictor, manifest, labels, model_id=model_id, sub_dataset=args.sub_dataset
    )
    written = report_emit(report, cm, args.out)
    _status(
        command="evaluate",
        clips=report.n_evaluated,
        failed=report.n_failed,
        accuracy=f"{report.accuracy_percent:.2f}",
        out=written[0].parent,
    )
    return 0


def _cmd_report(args) -> int:
    from .metrics import load_report, report_emit

    report, cm = load_report(args.metrics)
    if cm is None:
        raise ValueError(f"{args.metrics}: missing confusion matrix; cannot rebuild report files")
    blurred = None
    if args.blurred:
        blurred, _ = load_report(args.blurred)
        if set(blurred.per_class) != set(report.per_class):
            raise ValueError("paired reports cover different class sets")
    written = report_emit(report, cm, args.out, blurred=blurred)
    _status(command="report", files=len(written), out=written[0].parent)
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--clips-per-class", type=int, default=10)
    p.add_argument("--frames", type=int, default=32)
    p.add_argument("--resolution", type=_resolution, default=(64, 64), metavar="HxW")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subjects", type=int, default=5)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("ingest", help="scan per-class clip directories into a manifest")
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--label-map", help="JSON file mapping directory names to labels")
    p.add_argument("--exclude", help="file with one clip_id per line to skip")
    p.add_argument("--subject-pattern", help="regex; first group extracts subject_id")
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("redact", help="blur sensitive regions in clips")
    p.add_argument("--in", required=True, help="clip file or manifest.jsonl")
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=["fake", "file", "torchvision"], default="fake")
    p.add_argument("--detections", help="detection JSONL file or directory (file backend)")
    p.add_argument("--model-file", help="local detector weights (torchvision backend)")
    p.add_argument("--sigma", type=float)
    p.add_argument("--dilation", type=int)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--window", type=int, default=20)
    p.add_argument("--fail-open", action="store_true")
    p.add_argument("--config")
    p.set_defaults(func=_cmd_redact)

    p = sub.add_parser("train", help="train an activity classifier")
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--backbone")
    p.add_argument("--resolution", type=_resolution, metavar="HxW")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--labels", help="comma-separated class names")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("finetune", help="fine-tune a trained model on redacted clips")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--labels")
    p.set_defaults(func=_cmd_finetune)

    p = sub.add_parser("ensemble-build", help="calibrate F1 weights over member checkpoints")
    p.add_argument("--calibration", required=True, help="calibration manifest.jsonl")
    p.add_argument("--out", required=True)
    p.add_argument("--member", action="append", help="checkpoint path (repeatable)")
    p.add_argument("--original", action="append", help="original-video checkpoint (4 required)")
    p.add_argument("--fine-tuned", action="append", help="fine-tuned checkpoint (4 required)")
    p.add_argument("--mode", choices=["soft_f1_weighted", "hard_per_class"],
                   default="soft_f1_weighted")
    p.add_argument("--labels")
    p.add_argument("--config")
    p.set_defaults(func=_cmd_ensemble_build)

    p = sub.add_parser("predict", help="class probabilities for clips")
    p.add_argument("--in", required=True, help="clip file or manifest.jsonl")
    p.add_argument("--out", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model")
    group.add_argument("--ensemble")
    p.add_argument("--labels")
    p.add_argument("--config")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="score a model or ensemble on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--model")
    group.add_argument("--ensemble")
    p.add_argument("--model-id")
    p.add_argument("--sub-dataset")
    p.add_argument("--labels")
    p.add_argument("--config")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("report", help="rebuild report files from metrics.json")
    p.add_argument("--metrics", required=True)
    p.add_argument("--blurred", help="second metrics.json for paired F1 columns")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary maps failures to exit 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
