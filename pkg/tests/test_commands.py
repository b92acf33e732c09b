# tests/test_commands.py

from pathlib import Path

import numpy as np
import pytest

from motion_metric import commands, config_manager
from motion_metric.commands import DataSplit, cmd_eval, cmd_train
from motion_metric.config_manager import RunConfig, read_resolved_config


class Stop(Exception):
    pass


@pytest.fixture
def run_config(tmp_path, specs):
    config = RunConfig(out_dir=str(tmp_path / "run"))
    config.data.synthetic_specs = str(specs)
    config.data.window_len = 10
    config.data.window_gap = 5
    return config


class TestResolvedConfig:
    def test_written_before_data_is_loaded(self, run_config, monkeypatch):
        resolved = Path(run_config.out_dir) / "resolved_config.yaml"

        def prepare(config):
            assert resolved.is_file()
            raise Stop

        monkeypatch.setattr(commands, "prepare_data", prepare)
        with pytest.raises(Stop):
            cmd_train(run_config)

    def test_rewritten_when_input_dim_changes(self, run_config, monkeypatch):
        split = DataSplit([], [], [], "hash", input_dim=6)

        def train_model(*args, **kwargs):
            raise Stop

        monkeypatch.setattr(commands, "prepare_data", lambda config: split)
        monkeypatch.setattr(commands, "train_model", train_model)
        assert run_config.encoder.input_dim != 6
        with pytest.raises(Stop):
            cmd_train(run_config)
        resolved = read_resolved_config(Path(run_config.out_dir) / "resolved_config.yaml")
        assert resolved.encoder.input_dim == 6


def test_eval_uses_the_run_output_elements(run_config, monkeypatch):
    monkeypatch.setattr(config_manager, "APP_CONFIG", None)
    run_config.evaluation.metrics = ["dtw"]
    run_config.output_elements.save_excel_report = False

    reports = cmd_eval(run_config, None)

    out = Path(run_config.out_dir)
    assert [r.metric_name for r in reports] == ["dtw"]
    assert np.isfinite(reports[0].nmi)
    for name in ("eval_report.json", "eval_table.csv", "eval_table.md"):
        assert (out / name).is_file()
    assert not (out / "eval_report.xlsx").exists()
