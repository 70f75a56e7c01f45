import numpy as np
import pytest

from pava.ensemble import EnsembleSpec, combine, save_spec
from pava.loader import ClipLoader
from pava.model import ClassifierConfig, backbone_spec, new_model, save_checkpoint
from pava.predict import EnsemblePredictor, ModelPredictor, load_ensemble, loader_for_model
from pava.preprocess import SampleSpec

LABELS3 = ("chat", "clean", "drink")


def tiny_model(seed=0, num_classes=3):
    spec = backbone_spec("tiny_test_backbone", input_resolution=(48, 48))
    cfg = ClassifierConfig(feature_dim=8, lstm_hidden=6, num_classes=num_classes, n_frames=4)
    return new_model(spec, cfg, seed=seed)


class TestModelPredictor:
    def test_probabilities_for_record(self, tiny_dataset):
        _, manifest = tiny_dataset
        model = tiny_model()
        loader = loader_for_model(model, SampleSpec(n_frames=99, seed=0))
        predictor = ModelPredictor(model, loader)
        probs = predictor(manifest.records[0])
        assert probs.shape == (3,)
        assert probs.sum() == pytest.approx(1.0, abs=1e-6)
        np.testing.assert_array_equal(probs, predictor(manifest.records[0]))


class TestLoaderForModel:
    def test_matches_model_geometry(self):
        model = tiny_model()
        loader = loader_for_model(model, SampleSpec(n_frames=99, seed=7))
        assert loader.sample.n_frames == model.config.n_frames
        assert loader.sample.seed == 7
        assert loader.resolution == model.spec.input_resolution

    def test_preprocessing_passthrough(self):
        model = tiny_model()
        loader = loader_for_model(
            model,
            SampleSpec(n_frames=4, seed=0),
            channel_mean=(0.4, 0.4, 0.4),
            channel_std=(0.2, 0.2, 0.2),
            gamma_target=0.6,
            cache=False,
        )
        assert loader.channel_mean == (0.4, 0.4, 0.4)
        assert loader.channel_std == (0.2, 0.2, 0.2)
        assert loader.gamma_target == 0.6


class TestEnsemblePredictor:
    def test_count_mismatch_rejected(self):
        model = tiny_model()
        loader = loader_for_model(model, SampleSpec(n_frames=4, seed=0))
        predictors = [ModelPredictor(model, loader)]
        with pytest.raises(ValueError, match="1 predictors but weights for 2"):
            EnsemblePredictor(predictors, np.ones((2, 3)) / 2, "soft_f1_weighted")

    def test_fusion_matches_member_stack(self, tiny_dataset):
        _, manifest = tiny_dataset
        record = manifest.records[0]
        members = [tiny_model(seed=s) for s in (0, 1)]
        sample = SampleSpec(n_frames=4, seed=0)
        predictors = [ModelPredictor(m, loader_for_model(m, sample)) for m in members]
        weights = np.array([[0.6, 0.3, 0.5], [0.4, 0.7, 0.5]])
        fused = EnsemblePredictor(predictors, weights, "soft_f1_weighted")(record)
        stacked = np.stack([p(record) for p in predictors])
        np.testing.assert_array_equal(fused, combine(stacked, weights, "soft_f1_weighted"))


class TestLoadEnsemble:
    def save_members(self, tmp_path, num_classes=3):
        paths = []
        for seed in (0, 1):
            path = tmp_path / f"m{seed}.ckpt"
            save_checkpoint(path, tiny_model(seed=seed, num_classes=num_classes))
            paths.append(str(path))
        return paths

    def make_spec(self, paths):
        return EnsembleSpec(
            member_paths=tuple(paths),
            member_roles=("member", "member"),
            f1_matrix=np.full((2, 3), 0.5),
            mode="soft_f1_weighted",
            labels=LABELS3,
        )

    def test_loads_members_and_weights(self, tmp_path, tiny_dataset):
        _, manifest = tiny_dataset
        spec = self.make_spec(self.save_members(tmp_path))
        predictor = load_ensemble(spec, SampleSpec(n_frames=4, seed=0))
        assert len(predictor.predictors) == 2
        np.testing.assert_array_equal(predictor.weights, spec.weights)
        probs = predictor(manifest.records[0])
        assert probs.shape == (3,)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_class_count_mismatch_rejected(self, tmp_path):
        spec = self.make_spec(self.save_members(tmp_path, num_classes=4))
        with pytest.raises(ValueError, match="4 classes, .*lists 3"):
            load_ensemble(spec, SampleSpec(n_frames=4, seed=0))

    def test_round_trips_through_spec_file(self, tmp_path, tiny_dataset):
        from pava.ensemble import load_spec

        _, manifest = tiny_dataset
        spec = self.make_spec(self.save_members(tmp_path))
        save_spec(spec, tmp_path / "ensemble.json")
        loaded = load_spec(tmp_path / "ensemble.json")
        a = load_ensemble(spec, SampleSpec(n_frames=4, seed=0))
        b = load_ensemble(loaded, SampleSpec(n_frames=4, seed=0))
        record = manifest.records[0]
        np.testing.assert_array_equal(a(record), b(record))
