import json

import pytest

from pava.config import (
    ConfigError,
    backbone_from_config,
    blur_from_config,
    classifier_from_config,
    label_space_from_config,
    load_config,
    preprocess_from_config,
    train_from_config,
)


def write_cfg(tmp_path, obj):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(obj), encoding="utf-8")
    return path


class TestLoadConfig:
    def test_empty_object_is_valid(self, tmp_path):
        assert load_config(write_cfg(tmp_path, {})) == {}

    def test_sections_pass_through(self, tmp_path):
        obj = {"train": {"epochs": 3}, "seed": 7}
        assert load_config(write_cfg(tmp_path, obj)) == obj

    def test_unknown_section_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="trainer"):
            load_config(write_cfg(tmp_path, {"trainer": {}}))

    def test_non_object_root_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="JSON object"):
            load_config(write_cfg(tmp_path, [1, 2]))

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config(path)


class TestLabelsSection:
    def test_default_is_full_activity_set(self):
        space = label_space_from_config({})
        assert len(space) == 18
        assert space.names[0] == "chat"

    def test_explicit_labels(self):
        space = label_space_from_config({"labels": ["walk", "chat"]})
        assert space.names == ("walk", "chat")

    def test_non_string_labels_rejected(self):
        with pytest.raises(ConfigError, match="list of strings"):
            label_space_from_config({"labels": [1, 2]})


class TestBackboneSection:
    def test_defaults(self):
        out = backbone_from_config({})
        assert out == {
            "name": "tiny_test_backbone",
            "frozen": True,
            "input_resolution": None,
            "weights": None,
        }

    def test_resolution_becomes_tuple(self):
        out = backbone_from_config({"backbone": {"input_resolution": [324, 324]}})
        assert out["input_resolution"] == (324, 324)

    def test_bad_resolution_rejected(self):
        with pytest.raises(ConfigError, match="height, width"):
            backbone_from_config({"backbone": {"input_resolution": [324]}})

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="pretrained"):
            backbone_from_config({"backbone": {"pretrained": True}})


class TestClassifierSection:
    def test_defaults(self):
        out = classifier_from_config({}, num_classes=18)
        assert out["feature_dim"] == 512
        assert out["lstm_hidden"] == 1024
        assert out["bidirectional"] is True
        assert out["attention"] is True
        assert out["attention_position"] == "post_lstm"
        assert out["n_frames"] == 40
        assert out["num_classes"] == 18

    def test_num_classes_comes_from_caller(self):
        assert classifier_from_config({}, num_classes=3)["num_classes"] == 3

    def test_overrides(self):
        cfg = {"classifier": {"feature_dim": 64, "attention": False, "n_frames": 8}}
        out = classifier_from_config(cfg, num_classes=3)
        assert out["feature_dim"] == 64
        assert out["attention"] is False
        assert out["n_frames"] == 8

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="dropout"):
            classifier_from_config({"classifier": {"dropout": 0.5}}, num_classes=3)


class TestTrainSection:
    def test_defaults(self):
        cfg = train_from_config({})
        assert cfg.epochs == 20
        assert cfg.lr0 == 0.001
        assert cfg.per_class_in_batch == 2
        assert cfg.hflip_prob == 0.5
        assert cfg.seed == 0
        assert cfg.scheduler.patience == 5
        assert cfg.scheduler.factor == 0.1

    def test_seed_falls_back_to_root(self):
        assert train_from_config({"seed": 9}).seed == 9
        assert train_from_config({"seed": 9, "train": {"seed": 4}}).seed == 4

    def test_scheduler_keys(self):
        cfg = train_from_config({"train": {"patience": 2, "factor": 0.5}})
        assert cfg.scheduler.patience == 2
        assert cfg.scheduler.factor == 0.5

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="momentum"):
            train_from_config({"train": {"momentum": 0.9}})

    def test_invalid_values_propagate(self):
        with pytest.raises(ValueError, match="epochs"):
            train_from_config({"train": {"epochs": -1}})


class TestPreprocessSection:
    def test_defaults(self):
        out = preprocess_from_config({}, n_frames=40)
        assert out["sample"].n_frames == 40
        assert out["sample"].seed == 0
        assert out["channel_mean"] == (0.0, 0.0, 0.0)
        assert out["channel_std"] == (1.0, 1.0, 1.0)
        assert out["gamma_target"] == 0.5

    def test_sample_seed_from_root(self):
        assert preprocess_from_config({"seed": 3}, n_frames=8)["sample"].seed == 3

    def test_channel_stats(self):
        cfg = {"preprocess": {"channel_mean": [0.4, 0.4, 0.4], "channel_std": [0.2, 0.2, 0.2]}}
        out = preprocess_from_config(cfg, n_frames=8)
        assert out["channel_mean"] == (0.4, 0.4, 0.4)
        assert out["channel_std"] == (0.2, 0.2, 0.2)

    def test_wrong_length_stats_rejected(self):
        with pytest.raises(ConfigError, match="channel_mean"):
            preprocess_from_config({"preprocess": {"channel_mean": [0.5]}}, n_frames=8)
        with pytest.raises(ConfigError, match="channel_std"):
            preprocess_from_config({"preprocess": {"channel_std": [1, 1, 1, 1]}}, n_frames=8)


class TestBlurSection:
    def test_defaults(self):
        params = blur_from_config({})
        assert params.sigma == 12.0
        assert params.mask_dilation == 2
        assert params.radius == 36  # ceil(3 sigma) when unset

    def test_overrides(self):
        params = blur_from_config({"blur": {"sigma": 4.0, "kernel_radius": 5, "mask_dilation": 1}})
        assert params.sigma == 4.0
        assert params.radius == 5
        assert params.mask_dilation == 1

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="strength"):
            blur_from_config({"blur": {"strength": 2}})
