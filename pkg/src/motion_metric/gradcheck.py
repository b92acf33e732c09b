# src/motion_metric/gradcheck.py

"""Central finite-difference verification of tape gradients."""

from typing import Callable, Sequence

import numpy as np

from .errors import NonFiniteError
from .logger_setup import get_logger
from .tensor import DenseArray, backward, recording

logger = get_logger(__name__)

ScalarFunction = Callable[..., DenseArray | float]


def _evaluate(f: ScalarFunction, params) -> float:
    out = f(params)
    value = out.item() if isinstance(out, DenseArray) else float(out)
    if not np.isfinite(value):
        raise NonFiniteError(f"Function evaluated to {value} during finite differences")
    return value


def finite_difference_check(
    f: ScalarFunction,
    params: DenseArray | Sequence[DenseArray],
    step: float = 1e-5,
) -> float:
    """Compares tape gradients of `f` against central differences.

    Args:
        f (ScalarFunction): Deterministic function called as `f(params)` returning a scalar.
        params (DenseArray | Sequence[DenseArray]): Arrays to differentiate; perturbed in place
            and restored afterwards.
        step (float): Central-difference step.

    Returns:
        float: max over coordinates of |analytic - numeric| / max(1, |numeric|).

    Raises:
        ValueError: If step is not positive.
        NonFiniteError: If any evaluation of `f` is NaN or infinite.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    arrays = [params] if isinstance(params, DenseArray) else list(params)
    saved_flags = [a.requires_grad for a in arrays]
    saved_values = [a.values.copy() for a in arrays]
    for arr in arrays:
        arr.requires_grad = True
        arr.zero_grad()

    try:
        with recording():
            out = f(params)
            if not isinstance(out, DenseArray) or out._tape is None:
                # Constant in params: the analytic gradient is identically zero.
                analytic = [np.zeros_like(a.values) for a in arrays]
            else:
                backward(out)
                analytic = [a.grad.copy() if a.grad is not None else np.zeros_like(a.values) for a in arrays]
        _evaluate(f, params)

        worst = 0.0
        for arr, grad in zip(arrays, analytic):
            flat = arr.values.reshape(-1)
            flat_grad = grad.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + step
                upper = _evaluate(f, params)
                flat[i] = original - step
                lower = _evaluate(f, params)
                flat[i] = original
                numeric = (upper - lower) / (2.0 * step)
                error = abs(flat_grad[i] - numeric) / max(1.0, abs(numeric))
                worst = max(worst, error)
    finally:
        for arr, flag, values in zip(arrays, saved_flags, saved_values):
            arr.values[...] = values
            arr.requires_grad = flag
            arr.zero_grad()

    logger.debug(f"Finite-difference check over {sum(a.size for a in arrays)} coordinates: max relative error {worst:.3e}")
    return worst
