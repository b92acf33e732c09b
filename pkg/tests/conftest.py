# tests/conftest.py

import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

SRC_DIR = Path(__file__).resolve().parents[1] / "src"
if str(SRC_DIR) not in sys.path:
    sys.path.insert(0, str(SRC_DIR))

from motion_metric.config_manager import load_app_config  # noqa: E402
from motion_metric.encoder import EncoderConfig  # noqa: E402
from motion_metric.motion import MotionSequence  # noqa: E402

PROJECT_ROOT = SRC_DIR.parent
SYNTHETIC_SPECS = PROJECT_ROOT / "data" / "synthetic_specs.yaml"


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run end-to-end training checks")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end training check, skipped without --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """H=4, e=4 encoder over 3-dimensional frames, without dropout."""
    return EncoderConfig(
        input_dim=3, hidden_size=4, embedding_size=4, attention_width=3, fc_width=6, dropout_rate=0.0,
    )


def make_sequence(frames, label="a", subject=None, source_id="seq", rate=30.0):
    return MotionSequence(
        frames=np.asarray(frames, dtype=np.float64),
        frame_rate_hz=rate,
        category_label=label,
        subject_label=subject,
        source_id=source_id,
    )


def random_sequences(rng, labels, per_label, dim=3, lengths=(4, 6)):
    """Random-walk sequences, `per_label` per label, lengths drawn from `lengths`."""
    sequences = []
    for label in labels:
        for k in range(per_label):
            n = int(rng.integers(lengths[0], lengths[1] + 1))
            frames = np.cumsum(rng.normal(0.0, 0.3, size=(n, dim)), axis=0)
            sequences.append(make_sequence(frames, label=label, subject=f"s{k % 2}", source_id=f"{label}-{k}"))
    return sequences


@pytest.fixture
def app_config(tmp_path, monkeypatch):
    """Loads the global run configuration into a temporary output directory."""
    monkeypatch.delenv("MOTION_METRIC_OUTPUT_ROOT", raising=False)
    return load_app_config(overrides={"out_dir": str(tmp_path)})


@pytest.fixture
def specs(tmp_path):
    """Four small, well separated synthetic classes of two joints."""
    document = {
        "samples_per_class": 4,
        "defaults": {"joint_count": 2, "length_range": [20, 30], "noise_std": 0.02},
        "classes": [{"name": f"c{k}", "frequencies": f} for k, f in enumerate([0.5, 1.0, 2.0, 3.0])],
    }
    path = tmp_path / "specs.yaml"
    path.write_text(yaml.safe_dump(document), encoding="utf-8")
    return path
