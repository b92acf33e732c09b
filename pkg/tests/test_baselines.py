# tests/test_baselines.py

import numpy as np
import pytest

from motion_metric.baselines import WarpPath, dtw_distance, l2_sequence_distance, local_cost_matrix
from motion_metric.errors import ShapeError


def _column(values):
    return np.asarray(values, dtype=float)[:, None]


def _all_warp_costs(costs):
    """Every monotone continuous path cost, by exhaustive recursion."""
    n, m = costs.shape

    def walk(i, j):
        if (i, j) == (n - 1, m - 1):
            yield costs[i, j]
            return
        for di, dj in ((1, 1), (1, 0), (0, 1)):
            if i + di < n and j + dj < m:
                for rest in walk(i + di, j + dj):
                    yield costs[i, j] + rest

    return list(walk(0, 0))


class TestL2:
    def test_unit_offset(self):
        assert l2_sequence_distance(_column([0, 0, 0]), _column([1, 1, 1])) == 1.0

    def test_identical_sequences(self, rng):
        x = rng.normal(size=(5, 4))
        assert l2_sequence_distance(x, x) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            l2_sequence_distance(_column([0, 1]), _column([0, 1, 2]))


class TestDTW:
    def test_repeated_frame_costs_nothing(self):
        distance, path = dtw_distance(_column([0, 1, 2]), _column([0, 1, 1, 2]), local_cost="absolute")
        assert distance == 0.0
        assert path.is_valid(3, 4)

    def test_single_frames(self):
        distance, path = dtw_distance(_column([0]), _column([5]), local_cost="absolute")
        assert distance == 5.0
        assert path.pairs == ((0, 0),)

    def test_identity(self, rng):
        x = rng.normal(size=(6, 3))
        assert dtw_distance(x, x)[0] == 0.0

    def test_symmetry(self, rng):
        x, y = rng.normal(size=(5, 3)), rng.normal(size=(7, 3))
        assert dtw_distance(x, y)[0] == pytest.approx(dtw_distance(y, x)[0], rel=1e-12)

    def test_path_cost_matches_distance(self, rng):
        x, y = rng.normal(size=(8, 2)), rng.normal(size=(5, 2))
        distance, path = dtw_distance(x, y)
        assert path.is_valid(8, 5)
        assert path.cost(local_cost_matrix(x, y)) == distance

    def test_matches_exhaustive_search(self, rng):
        for _ in range(200):
            n, m = rng.integers(1, 7, size=2)
            x, y = rng.normal(size=(n, 2)), rng.normal(size=(m, 2))
            brute = min(_all_warp_costs(local_cost_matrix(x, y)))
            assert dtw_distance(x, y)[0] == pytest.approx(brute, rel=1e-12)

    def test_callable_local_cost(self):
        def chebyshev(u, v):
            return float(np.max(np.abs(u - v)))

        x = np.array([[0.0, 0.0], [1.0, 3.0]])
        assert dtw_distance(x, x + 1.0, local_cost=chebyshev)[0] == 2.0

    def test_dimension_mismatch(self, rng):
        with pytest.raises(ShapeError):
            dtw_distance(rng.normal(size=(3, 2)), rng.normal(size=(3, 3)))

    def test_empty_sequence(self):
        with pytest.raises(ShapeError):
            dtw_distance(np.zeros((0, 2)), np.zeros((3, 2)))

    def test_unknown_local_cost(self, rng):
        with pytest.raises(ValueError, match="Unknown local cost"):
            dtw_distance(rng.normal(size=(3, 2)), rng.normal(size=(3, 2)), local_cost="cosine-ish")


def test_invalid_paths_are_detected():
    assert not WarpPath(((0, 0), (2, 2))).is_valid(3, 3)
    assert not WarpPath(((0, 0), (1, 1))).is_valid(3, 3)
    assert WarpPath(((0, 0), (1, 0), (1, 1), (2, 2))).is_valid(3, 3)
