# src/motion_metric/baselines.py

"""Non-learned sequence distances: framewise L2 and dynamic time warping."""

from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ShapeError
from .motion import MotionSequence

LOCAL_COSTS = {
    "euclidean": "euclidean",
    "sqeuclidean": "sqeuclidean",
    "absolute": "cityblock",
    "cityblock": "cityblock",
}

LocalCost = str | Callable[[np.ndarray, np.ndarray], float]


@dataclass(frozen=True)
class WarpPath:
    """Monotone, continuous alignment from (0, 0) to (n-1, m-1)."""

    pairs: Tuple[Tuple[int, int], ...]

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def is_valid(self, n: int, m: int) -> bool:
        if not self.pairs or self.pairs[0] != (0, 0) or self.pairs[-1] != (n - 1, m - 1):
            return False
        for (i0, j0), (i1, j1) in zip(self.pairs, self.pairs[1:]):
            if (i1 - i0, j1 - j0) not in ((1, 0), (0, 1), (1, 1)):
                return False
        return True

    def cost(self, costs: np.ndarray) -> float:
        """Cumulative local cost along the path, summed in path order."""
        total = 0.0
        for i, j in self.pairs:
            total = costs[i, j] + total
        return float(total)


def _frames(x: MotionSequence | np.ndarray) -> np.ndarray:
    frames = x.frames if isinstance(x, MotionSequence) else np.asarray(x, dtype=np.float64)
    if frames.ndim == 1:
        frames = frames[:, None]
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise ShapeError("sequence_distance", [frames.shape], "expected a non-empty (n, d) sequence")
    return frames


def l2_sequence_distance(X: MotionSequence | np.ndarray, Y: MotionSequence | np.ndarray) -> float:
    """Mean over frames of the squared distance between corresponding poses."""
    x, y = _frames(X), _frames(Y)
    if x.shape != y.shape:
        raise ShapeError("l2_sequence_distance", [x.shape, y.shape], "L2 needs equal length and dimension")
    return float(np.mean(np.sum((x - y) ** 2, axis=1)))


def local_cost_matrix(X: MotionSequence | np.ndarray, Y: MotionSequence | np.ndarray, local_cost: LocalCost = "euclidean") -> np.ndarray:
    x, y = _frames(X), _frames(Y)
    if x.shape[1] != y.shape[1]:
        raise ShapeError("dtw_distance", [x.shape, y.shape], "pose dimensions differ")
    if callable(local_cost):
        return cdist(x, y, metric=local_cost)
    if local_cost not in LOCAL_COSTS:
        raise ValueError(f"Unknown local cost '{local_cost}'; expected one of {sorted(LOCAL_COSTS)} or a callable")
    return cdist(x, y, metric=LOCAL_COSTS[local_cost])


def _accumulate(costs: np.ndarray) -> np.ndarray:
    """Cumulative cost table padded with an infinite border, filled by anti-diagonals."""
    n, m = costs.shape
    acc = np.full((n + 1, m + 1), np.inf)
    acc[0, 0] = 0.0
    for k in range(2, n + m + 1):
        i = np.arange(max(1, k - m), min(n, k - 1) + 1)
        j = k - i
        best = np.minimum(np.minimum(acc[i - 1, j - 1], acc[i - 1, j]), acc[i, j - 1])
        acc[i, j] = costs[i - 1, j - 1] + best
    return acc


def _traceback(acc: np.ndarray) -> WarpPath:
    i, j = acc.shape[0] - 1, acc.shape[1] - 1
    pairs: List[Tuple[int, int]] = [(i - 1, j - 1)]
    while (i, j) != (1, 1):
        # ties: diagonal, then advance in X, then advance in Y
        step = int(np.argmin((acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])))
        if step == 0:
            i, j = i - 1, j - 1
        elif step == 1:
            i -= 1
        else:
            j -= 1
        pairs.append((i - 1, j - 1))
    return WarpPath(tuple(reversed(pairs)))


def dtw_distance(
    X: MotionSequence | np.ndarray,
    Y: MotionSequence | np.ndarray,
    local_cost: LocalCost = "euclidean",
) -> Tuple[float, WarpPath]:
    """Minimum cumulative local cost over all warp paths, with one optimal path.

    Steps are match (i+1, j+1), insertion (i+1, j) and deletion (i, j+1).
    No band constraint; O(nm) time and memory.

    Raises:
        ShapeError: If either sequence is empty or the pose dimensions differ.
    """
    costs = local_cost_matrix(X, Y, local_cost)
    acc = _accumulate(costs)
    return float(acc[-1, -1]), _traceback(acc)
