"""Release acceptance: nine shipping criteria, one test each.

Every test is wrapped by the `criterion` decorator, which records a
PASS/FAIL line that conftest prints as a dedicated section at the end of
the run. Tolerances and runtime budgets are pinned inside each test; the
desk-scale end-to-end fixture is shared by criteria 6 and 7.
"""

import functools
import time
from dataclasses import replace
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
import torch

import conftest
from conftest import make_manifest
from oracles import (
    anomaly_count_direct,
    anomaly_flags_direct,
    blur_2d_direct,
    f1_direct,
    finite_difference_grads,
    hard_combine_direct,
    soft_combine_direct,
    weights_direct,
)
from pava.dataset import DatasetManifest, SynthConfig, split, synth_dataset
from pava.ensemble import combine, compute_weights
from pava.labels import FPV_O_CLASSES, LabelSpace
from pava.loader import ClipLoader
from pava.metrics import ConfusionMatrix, evaluate, per_class_f1, precision_recall
from pava.model import ClassifierConfig, backbone_spec, new_model
from pava.predict import ModelPredictor
from pava.preprocess import FrameSequence, SampleSpec
from pava.privacy import (
    BlurParams,
    GroundTruthBackend,
    PresenceSeries,
    anomaly_frame_count,
    blur_masked,
    redact_clip,
)
from pava.training import (
    PlateauScheduler,
    SchedulerConfig,
    TrainConfig,
    balanced_batches,
    fine_tune,
    train,
)
from pava.video import read_clip, write_clip


def criterion(number, summary):
    """Record the outcome under the criterion number for the summary hook."""

    def decorate(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                result = fn(*args, **kwargs)
            except BaseException:
                conftest.ACCEPTANCE_RESULTS[number] = ("FAIL", summary)
                raise
            conftest.ACCEPTANCE_RESULTS[number] = ("PASS", summary)
            return result

        return wrapper

    return decorate


class TestCriterion1BlurLocality:
    @criterion(1, "masked blur leaves out-of-mask pixels bit-identical; in-mask within 1e-6 of a 2-D oracle")
    def test_fifty_frames_against_dense_convolution(self):
        started = time.perf_counter()
        rng = np.random.default_rng(401)
        for i in range(50):
            frame = rng.random((64, 64, 3))
            mask = rng.random((64, 64)) < rng.uniform(0.02, 0.5)
            if i == 0:
                mask[:] = False
            elif i == 1:
                mask[:] = True
            params = BlurParams(sigma=12.0) if i % 8 == 0 else BlurParams(sigma=4.0)
            out = blur_masked(frame, mask, params)
            np.testing.assert_array_equal(out[~mask], frame[~mask])
            if mask.any():
                reference = blur_2d_direct(frame, params.sigma, params.radius)
                assert float(np.abs(out[mask] - reference[mask]).max()) < 1e-6
        assert time.perf_counter() - started < 60.0


class TestCriterion2AnomalyOracle:
    @criterion(2, "anomaly counts equal a brute-force gap enumerator; clean-set accuracy 0 at th 5 and 10")
    def test_ten_thousand_vectors_and_clean_clips(self, tiny_dataset):
        started = time.perf_counter()
        rng = np.random.default_rng(402)
        names = ("person", "laptop", "book")
        for case in range(10_000):
            t = int(rng.integers(1, 41))
            presence = {}
            for name in names[: 1 + (case % 3 == 0)]:
                presence[name] = rng.random(t) < rng.uniform(0.1, 0.95)
            series = PresenceSeries(presence, t)
            for th in range(1, 11):
                report = anomaly_frame_count(series, window=20, threshold=th)
                assert report.anomaly_frame_count == anomaly_count_direct(presence, th, 20)
                if case % 25 == 0:
                    for name, vec in presence.items():
                        flags = anomaly_flags_direct(vec.tolist(), th, 20)
                        np.testing.assert_array_equal(report.anomalous_frames[name], flags)

        # The planted region is present in every synthetic frame, so a
        # ground-truth backend never produces an absence gap.
        _, manifest = tiny_dataset
        flagged = 0
        total = 0
        for record in manifest:
            frames, _ = read_clip(record.path)
            result = redact_clip(
                FrameSequence.from_uint8(frames), GroundTruthBackend.for_clip(record.path)
            )
            for th in (5, 10):
                report = anomaly_frame_count(result.presence, window=20, threshold=th)
                assert report.anomaly_frame_count == 0
                assert report.accuracy_percent == 0.0
            flagged += report.anomaly_frame_count
            total += report.total_frames
        assert total > 0
        assert 100.0 * flagged / total == 0.0
        assert time.perf_counter() - started < 30.0


class TestCriterion3BalancedSampler:
    @criterion(3, "1,000 balanced batches hold exactly k clips of all 18 classes; k=2 gives 36-clip batches")
    def test_exact_composition_on_skewed_manifest(self):
        started = time.perf_counter()
        sizes = (1, 2, 3, 4, 6, 9, 13, 18, 25, 33, 42, 52, 63, 75, 88, 94, 97, 100)
        manifest = make_manifest(dict(zip(FPV_O_CLASSES, sizes)))
        label_of = {record.clip_id: record.label for record in manifest}
        expected = dict.fromkeys(FPV_O_CLASSES, 2)
        checked = 0
        epoch = 0
        while checked < 1_000:
            plan = balanced_batches(manifest, 2, seed=epoch)
            assert plan.classes == FPV_O_CLASSES
            assert plan.batch_size == 36
            assert len(plan.batches) == 50
            for ids, labels in zip(plan.batches, plan.batch_labels):
                assert tuple(label_of[clip_id] for clip_id in ids) == labels
                counts: dict[str, int] = {}
                for clip_id in ids:
                    counts[label_of[clip_id]] = counts.get(label_of[clip_id], 0) + 1
                assert counts == expected
            checked += len(plan.batches)
            epoch += 1
        assert checked >= 1_000
        assert time.perf_counter() - started < 10.0


class TestCriterion4Gradients:
    @criterion(4, "LSTM, attention, and head gradients match finite differences, max rel error < 1e-3")
    def test_composed_stages_at_pinned_dims(self):
        started = time.perf_counter()
        torch.manual_seed(404)
        spec = backbone_spec("tiny_test_backbone", input_resolution=(32, 32))
        config = ClassifierConfig(feature_dim=8, lstm_hidden=16, num_classes=3, n_frames=4)
        module = new_model(spec, config, seed=0).module.double()
        module.train()
        features = torch.randn(2, 4, 8, dtype=torch.float64)
        labels = torch.tensor([0, 2])
        params = (
            list(module.lstm.parameters())
            + list(module.attention.parameters())
            + list(module.fc.parameters())
            + list(module.bn.parameters())
        )

        def loss_fn():
            states = module.bilstm_forward(features)
            pooled, _ = module.framewise_attention(states)
            probs = module.head_forward(pooled)
            picked = probs[torch.arange(2), labels].clamp_min(1e-12)
            return -torch.log(picked).mean()

        loss_fn().backward()
        analytic = [p.grad.numpy().copy() for p in params]
        numeric = finite_difference_grads(loss_fn, params, h=1e-5)
        worst = 0.0
        for a, f in zip(analytic, numeric):
            rel = np.abs(a - f) / np.maximum(np.abs(a) + np.abs(f), 1e-6)
            worst = max(worst, float(rel.max()))
        assert worst < 1e-3
        assert time.perf_counter() - started < 120.0


class TestCriterion5EnsembleCorrectness:
    @criterion(5, "weights column-normalized to 1e-9; fusion equals direct summation; identical members keep argmax")
    def test_weights_fusion_and_identity(self):
        rng = np.random.default_rng(405)
        for _ in range(30):
            f1 = rng.uniform(0.05, 1.0, size=(int(rng.integers(1, 7)), int(rng.integers(2, 19))))
            columns = compute_weights(f1).sum(axis=0)
            assert float(np.abs(columns - 1.0).max()) <= 1e-9

        # Sums over at most 3 members run sequentially in numpy, so the
        # plain-Python oracle is bit-identical, not merely close.
        for members in (1, 2, 3):
            for classes in (2, 3, 4):
                f1 = rng.uniform(0.1, 1.0, size=(members, classes))
                probs = rng.dirichlet(np.ones(classes), size=members)
                weights = compute_weights(f1)
                np.testing.assert_array_equal(weights, weights_direct(f1.tolist()))
                soft = combine(probs, weights, mode="soft_f1_weighted")
                hard = combine(probs, weights, mode="hard_per_class")
                np.testing.assert_array_equal(soft, soft_combine_direct(probs.tolist(), weights.tolist()))
                np.testing.assert_array_equal(hard, hard_combine_direct(probs.tolist(), weights.tolist()))

        for _ in range(100):
            classes = int(rng.integers(2, 19))
            single = rng.dirichlet(np.ones(classes))
            stack = np.tile(single, (3, 1))
            weights = compute_weights(np.tile(rng.uniform(0.2, 1.0, size=classes), (3, 1)))
            for mode in ("soft_f1_weighted", "hard_per_class"):
                fused = combine(stack, weights, mode=mode)
                assert int(np.argmax(fused)) == int(np.argmax(single))


DESK_CLASSIFIER = ClassifierConfig(feature_dim=64, lstm_hidden=64, num_classes=4, n_frames=32)
# Flips are disabled because the synthetic classes encode motion direction,
# which a mirror inverts; the low gamma target darkens the clip-specific
# background so the moving bright blob dominates the features.
DESK_TRAIN = TrainConfig(epochs=20, lr0=0.01, per_class_in_batch=2, seed=0, hflip_prob=0.0)


@pytest.fixture(scope="module")
def desk_run(tmp_path_factory):
    """Desk-scale pipeline shared by criteria 6 and 7: synthetic 4-class set,
    32/8 split, one model trained on the original clips."""
    root = tmp_path_factory.mktemp("desk")
    started = time.perf_counter()
    full = synth_dataset(
        SynthConfig(classes=4, clips_per_class=10, frames=32, resolution=(64, 64), seed=0, subjects=5),
        root / "clips",
    )
    train_manifest, test_manifest = split(full, 32, 8, seed=0)
    labels = LabelSpace(tuple(sorted(full.labels())))
    loader = ClipLoader(SampleSpec(n_frames=32, seed=0), (64, 64), gamma_target=0.05)
    model = new_model(backbone_spec("tiny_test_backbone"), DESK_CLASSIFIER, seed=0)
    model, history = train(model, train_manifest, train_manifest, DESK_TRAIN, loader, labels)
    report, _ = evaluate(ModelPredictor(model, loader), test_manifest, labels)
    elapsed = time.perf_counter() - started
    return SimpleNamespace(
        root=root,
        train_manifest=train_manifest,
        test_manifest=test_manifest,
        labels=labels,
        loader=loader,
        model=model,
        history=history,
        report=report,
        elapsed=elapsed,
    )


class TestCriterion6DeskScaleEndToEnd:
    @criterion(6, "synthetic 4-class run reaches >= 90% held-out accuracy with a loss curve reproducible to 1e-6")
    def test_heldout_accuracy_and_reproducible_losses(self, desk_run):
        assert desk_run.report.accuracy_percent >= 90.0
        assert desk_run.elapsed < 900.0

        repeat = new_model(backbone_spec("tiny_test_backbone"), DESK_CLASSIFIER, seed=0)
        repeat, history = train(
            repeat, desk_run.train_manifest, desk_run.train_manifest,
            DESK_TRAIN, desk_run.loader, desk_run.labels,
        )
        assert len(history) == len(desk_run.history) == DESK_TRAIN.epochs
        for first, second in zip(desk_run.history, history):
            assert abs(first.train_loss - second.train_loss) <= 1e-6
            assert abs(first.val_loss - second.val_loss) <= 1e-6


class TestCriterion7FineTuningTrend:
    @criterion(7, "fine-tuned >= original on blurred test; original >= blurred-only on original test")
    def test_redaction_trade_off_directions(self, desk_run):
        blur_dir = desk_run.root / "blurred"
        blur_dir.mkdir(exist_ok=True)

        def redacted(manifest):
            records = []
            for record in manifest:
                frames, _ = read_clip(record.path)
                result = redact_clip(
                    FrameSequence.from_uint8(frames),
                    GroundTruthBackend.for_clip(record.path),
                    params=BlurParams(sigma=12.0),
                )
                out_path = blur_dir / (Path(record.path).stem + ".npy")
                write_clip(out_path, result.sequence.to_uint8())
                records.append(replace(record, path=str(out_path), variant="blurred"))
            return DatasetManifest(records)

        blurred_train = redacted(desk_run.train_manifest)
        blurred_test = redacted(desk_run.test_manifest)

        tune_config = TrainConfig(epochs=10, lr0=0.001, per_class_in_batch=2, seed=0, hflip_prob=0.0)
        tuned, _ = fine_tune(
            desk_run.model, blurred_train, blurred_train, tune_config, desk_run.loader, desk_run.labels
        )
        blurred_only = new_model(backbone_spec("tiny_test_backbone"), DESK_CLASSIFIER, seed=0)
        blurred_only, _ = train(
            blurred_only, blurred_train, blurred_train, DESK_TRAIN, desk_run.loader, desk_run.labels
        )

        def accuracy(model, manifest):
            report, _ = evaluate(ModelPredictor(model, desk_run.loader), manifest, desk_run.labels)
            return report.accuracy_percent

        assert accuracy(tuned, blurred_test) >= accuracy(desk_run.model, blurred_test)
        assert desk_run.report.accuracy_percent >= accuracy(blurred_only, desk_run.test_manifest)


class TestCriterion8SchedulerContract:
    @criterion(8, "five non-improving epochs step the learning rate exactly once, 0.001 to 0.0001")
    def test_single_step_after_patience(self):
        scheduler = PlateauScheduler(0.001, SchedulerConfig(patience=5, factor=0.1))
        assert scheduler.observe(1.0) is False
        stepped = [scheduler.observe(1.0) for _ in range(5)]
        assert stepped == [False, False, False, False, True]
        assert scheduler.steps == 1
        assert scheduler.lr == 0.001 * 0.1


class TestCriterion9MetricsArithmetic:
    @criterion(9, "confusion fixtures reproduce precision/recall/F1; a perfect predictor scores 100 and F1 1")
    def test_fixture_arithmetic_and_perfect_predictor(self):
        labels = LabelSpace(("chat", "clean", "drink"))
        counts = np.array([[2, 1, 0], [0, 3, 0], [1, 0, 3]], dtype=np.int64)
        cm = ConfusionMatrix(counts, labels.names)
        precision, recall = precision_recall(cm)
        p_direct, r_direct, f1_expected = f1_direct(counts.tolist())
        np.testing.assert_array_equal(precision, [2 / 3, 3 / 4, 1.0])
        np.testing.assert_array_equal(recall, [2 / 3, 1.0, 3 / 4])
        np.testing.assert_array_equal(precision, p_direct)
        np.testing.assert_array_equal(recall, r_direct)
        np.testing.assert_array_equal(per_class_f1(cm), f1_expected)

        manifest = make_manifest({"chat": 4, "clean": 3, "drink": 5})

        def perfect(record):
            probs = np.zeros(3)
            probs[labels.index_of(record.label)] = 1.0
            return probs

        report, cm_perfect = evaluate(perfect, manifest, labels)
        assert report.accuracy_percent == 100.0
        np.testing.assert_array_equal(per_class_f1(cm_perfect), [1.0, 1.0, 1.0])
