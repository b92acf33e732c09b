# tests/test_synthetic.py

import numpy as np
import pytest

from conftest import SYNTHETIC_SPECS
from motion_metric.errors import ConfigError
from motion_metric.synthetic import (
    SyntheticClassSpec,
    check_separability,
    generate_benchmark,
    generate_synthetic,
    load_synthetic_specs,
    spec_from_dict,
)


def _spec(name, frequency, **kwargs):
    return spec_from_dict({"name": name, "joint_count": 2, "frequencies": frequency,
                           "length_range": [40, 60], "noise_std": 0.02, **kwargs})


def test_generation_is_deterministic():
    spec = _spec("slow", 1.0)
    first = generate_synthetic(spec, 5, seed=9)
    second = generate_synthetic(spec, 5, seed=9)
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.frames, b.frames)


def test_lengths_vary_within_range():
    sequences = generate_synthetic(_spec("slow", 1.0), 20, seed=1)
    lengths = {s.n_frames for s in sequences}
    assert len(lengths) > 1
    assert all(40 <= n <= 60 for n in lengths)
    assert all(s.dim == 6 for s in sequences)


def test_labels_and_ids():
    sequences = generate_synthetic(_spec("slow", 1.0, subjects=3), 4, seed=2)
    assert [s.source_id for s in sequences] == [f"slow-{i:04d}" for i in range(4)]
    assert {s.category_label for s in sequences} == {"slow"}
    assert all(s.subject_label.startswith("subject") for s in sequences)


def test_discriminative_segment_raises_amplitude():
    spec = _spec("accent", 1.0, noise_std=0.0,
                 discriminative_segment={"start": 0.25, "end": 0.75, "boost": 2.0, "frequency": 3.0})
    seq = generate_synthetic(spec, 1, seed=0)[0]
    n = seq.n_frames
    middle = np.abs(seq.frames[int(np.ceil(0.25 * n)):int(np.floor(0.75 * n))]).max()
    assert middle > 2.0
    assert np.abs(seq.frames[: int(0.25 * n)]).max() <= 0.5 + 1e-12


def test_frequency_classes_are_dtw_separable():
    results = check_separability([_spec("one_hz", 1.0), _spec("three_hz", 3.0)], probe_count=4, seed=0)
    within, across = results[("one_hz", "three_hz")]
    assert across > within


def test_invalid_spec_is_rejected():
    with pytest.raises(ConfigError):
        _spec("bad", [1.0, 2.0, 3.0])
    with pytest.raises(ConfigError):
        _spec("bad", -1.0)
    with pytest.raises(ConfigError):
        SyntheticClassSpec("bad", 1, (0.5,), (1.0,), (0.0,), length_range=(5, 4))


def test_bundled_benchmark_file():
    specs, samples_per_class = load_synthetic_specs(SYNTHETIC_SPECS)
    assert len(specs) == 10
    assert samples_per_class == 40
    assert all(s.dim == 24 for s in specs)
    accent = {s.name: s for s in specs}["swing_accent"]
    assert accent.discriminative_segment is not None


def test_benchmark_is_seeded():
    specs = [_spec("slow", 1.0), _spec("fast", 3.0)]
    first = generate_benchmark(specs, 3, seed=5)
    second = generate_benchmark(specs, 3, seed=5)
    other = generate_benchmark(specs, 3, seed=6)
    assert len(first) == 6
    assert all(np.array_equal(a.frames, b.frames) for a, b in zip(first, second))
    assert not all(a.frames.shape == b.frames.shape and np.array_equal(a.frames, b.frames) for a, b in zip(first, other))


def test_missing_spec_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_synthetic_specs(tmp_path / "absent.yaml")
