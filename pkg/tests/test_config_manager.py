# tests/test_config_manager.py

import pytest
import yaml

from motion_metric import config_manager
from motion_metric.config_manager import (
    get_config,
    load_app_config,
    profile_defaults,
    read_resolved_config,
    write_resolved_config,
)
from motion_metric.errors import ConfigError


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    monkeypatch.delenv("MOTION_METRIC_OUTPUT_ROOT", raising=False)
    monkeypatch.setattr(config_manager, "APP_CONFIG", None)


def _write_yaml(path, document):
    path.write_text(yaml.safe_dump(document), encoding="utf-8")
    return path


def test_desk_profile_is_the_default():
    config = load_app_config()
    assert config.profile == "desk"
    assert config.encoder.hidden_size == 32
    assert config.train.negative_classes == config.loss.negative_classes == 3


def test_paper_profile():
    config = load_app_config(profile="paper")
    assert (config.encoder.hidden_size, config.encoder.embedding_size) == (128, 128)
    assert (config.train.samples_per_class, config.train.negative_classes) == (25, 5)
    assert config.train.clip_norm == 25.0
    assert config.loss.kernel.bandwidths == (1.0, 2.0, 4.0, 8.0, 16.0)


def test_yaml_then_overrides(tmp_path):
    path = _write_yaml(tmp_path / "run.yaml", {"seed": 3, "encoder": {"hidden_size": 16}, "train": {"lr0": 0.001}})
    config = load_app_config(path, overrides={"encoder": {"hidden_size": 8}})
    assert config.seed == 3
    assert config.train.seed == 3
    assert config.train.lr0 == 0.001
    assert config.encoder.hidden_size == 8
    assert config.encoder.embedding_size == 32


def test_profile_in_yaml(tmp_path):
    path = _write_yaml(tmp_path / "run.yaml", {"profile": "paper"})
    assert load_app_config(path).encoder.fc_width == 320


def test_unknown_key_is_rejected(tmp_path):
    path = _write_yaml(tmp_path / "run.yaml", {"encoder": {"hidden": 16}})
    with pytest.raises(ConfigError, match="encoder.hidden"):
        load_app_config(path)


def test_unknown_profile():
    with pytest.raises(ConfigError, match="profile"):
        load_app_config(profile="laptop")


def test_triplet_needs_a_margin():
    with pytest.raises(ConfigError, match="loss.margin"):
        load_app_config(overrides={"loss": {"loss_kind": "triplet"}})
    config = load_app_config(overrides={"loss": {"loss_kind": "triplet", "margin": 0.2}})
    assert config.loss.margin == 0.2


def test_invalid_values():
    with pytest.raises(ConfigError, match="data.label_key"):
        load_app_config(overrides={"data": {"label_key": "mood"}})
    with pytest.raises(ConfigError, match="evaluation.metrics"):
        load_app_config(overrides={"evaluation": {"metrics": ["cosine"]}})


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_app_config(tmp_path / "absent.yaml")


def test_yaml_must_be_a_mapping(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("- just\n- a list\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_app_config(path)


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("MOTION_METRIC_OUTPUT_ROOT", str(tmp_path / "runs"))
    assert load_app_config().out_dir == str(tmp_path / "runs")
    assert load_app_config(overrides={"out_dir": "explicit"}).out_dir == "explicit"


def test_resolved_config_round_trip(tmp_path):
    config = load_app_config(overrides={"seed": 11, "loss": {"kernel": {"family": "polynomial"}}})
    path = write_resolved_config(config, tmp_path)
    assert path.name == "resolved_config.yaml"
    assert read_resolved_config(path).to_dict() == config.to_dict()


def test_get_config():
    with pytest.raises(RuntimeError):
        get_config()
    config = load_app_config()
    assert get_config() is config


def test_profile_defaults_are_complete():
    defaults = profile_defaults("desk")
    assert set(defaults) == {"profile", "seed", "out_dir", "log_level", "encoder", "train", "loss", "data",
                             "evaluation", "output_elements"}
