# src/motion_metric/tensor.py

"""Dense float64 arrays with tape-based reverse-mode differentiation.

Every operation goes through `apply`, which looks up the op kind in a registry
of forward/backward rules. When a computation tape is active (see `recording`)
and any input requires a gradient, the call is appended to the tape; `backward`
later replays the tape in reverse creation order, which is a reverse
topological order of the graph.

Example:
    >>> x = DenseArray([1.0, 2.0, 3.0], requires_grad=True)
    >>> with recording():
    ...     y = reduce_sum(x * x)
    ...     backward(y)
    >>> x.grad
    array([2., 4., 6.])
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Sequence, Tuple

import numpy as np
from scipy.special import expit
from scipy.special import logsumexp as _scipy_logsumexp
from scipy.special import softmax as _scipy_softmax

from .errors import DomainError, NonFiniteError, ShapeError, TapeError

ArrayLike = Any


class DenseArray:
    """A float64 array with an optional gradient slot."""

    # Makes `ndarray <op> DenseArray` dispatch to the DenseArray reflected operators.
    __array_priority__ = 1000

    def __init__(self, values: ArrayLike, requires_grad: bool = False, name: str | None = None):
        self.values: np.ndarray = np.array(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: ComputationTape | None = None

    @classmethod
    def _wrap(cls, values: np.ndarray) -> "DenseArray":
        arr = cls.__new__(cls)
        arr.values = np.asarray(values, dtype=np.float64)
        arr.requires_grad = False
        arr.grad = None
        arr.name = None
        arr._tape = None
        return arr

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def is_leaf(self) -> bool:
        return self._tape is None

    @property
    def T(self) -> "DenseArray":
        return transpose(self)

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError("item", [self.shape], "only size-1 arrays convert to a scalar")
        return float(self.values.reshape(()))

    def __float__(self) -> float:
        return self.item()

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def zero_grad(self) -> None:
        self.grad = None

    def check_finite(self, context: str = "") -> None:
        """Raises NonFiniteError if values or grad hold NaN/Inf."""
        label = self.name or context or "array"
        if not np.all(np.isfinite(self.values)):
            raise NonFiniteError(f"Non-finite values in {label}")
        if self.grad is not None and not np.all(np.isfinite(self.grad)):
            raise NonFiniteError(f"Non-finite gradient in {label}")

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "DenseArray":
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "DenseArray":
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: int) -> "DenseArray":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __add__(self, other: ArrayLike) -> "DenseArray":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "DenseArray":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "DenseArray":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "DenseArray":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "DenseArray":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "DenseArray":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "DenseArray":
        return div(self, other)

    def __rtruediv__(self, other: ArrayLike) -> "DenseArray":
        return div(other, self)

    def __matmul__(self, other: ArrayLike) -> "DenseArray":
        return matmul(self, other)

    def __rmatmul__(self, other: ArrayLike) -> "DenseArray":
        return matmul(other, self)

    def __neg__(self) -> "DenseArray":
        return neg(self)

    def __getitem__(self, index: Any) -> "DenseArray":
        return take_slice(self, index)

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"DenseArray(shape={self.shape}, requires_grad={self.requires_grad}{label})"


def as_dense(value: ArrayLike) -> DenseArray:
    """Wraps numbers and numpy arrays as constant DenseArrays."""
    if isinstance(value, DenseArray):
        return value
    return DenseArray._wrap(np.asarray(value, dtype=np.float64))


# ----------------------------------------------------------------------
# Tape
# ----------------------------------------------------------------------

@dataclass
class TapeRecord:
    op_kind: str
    inputs: Tuple[DenseArray, ...]
    output: DenseArray
    attrs: Dict[str, Any]
    backward_rule: Callable[..., Sequence[np.ndarray | None]]


@dataclass
class ComputationTape:
    """Ordered record of differentiable operations; one backward pass per reset."""

    records: List[TapeRecord] = field(default_factory=list)
    consumed: bool = False

    def __len__(self) -> int:
        return len(self.records)

    def record(self, record: TapeRecord) -> None:
        if self.consumed:
            raise TapeError("Cannot record on a tape that was already replayed; call reset() first.")
        record.output._tape = self
        self.records.append(record)

    def reset(self) -> None:
        self.records.clear()
        self.consumed = False

    def backward(self, output: DenseArray) -> None:
        """Populates `.grad` of every requires_grad array reachable from `output`."""
        if output.size != 1:
            raise TapeError(f"backward() needs a scalar output, got shape {output.shape}")
        if output._tape is not self:
            raise TapeError("Output was not produced on this tape.")
        if self.consumed:
            raise TapeError("backward() already ran on this tape; call reset() before a second pass.")
        if not np.all(np.isfinite(output.values)):
            raise NonFiniteError(f"Non-finite output {output.values.ravel()[0]} passed to backward().")
        self.consumed = True

        grads: Dict[int, np.ndarray] = {id(output): np.ones_like(output.values)}
        owners: Dict[int, DenseArray] = {id(output): output}

        for rec in reversed(self.records):
            upstream = grads.get(id(rec.output))
            if upstream is None:
                continue
            input_values = [a.values for a in rec.inputs]
            input_grads = rec.backward_rule(upstream, rec.output.values, *input_values, **rec.attrs)
            for arr, in_grad in zip(rec.inputs, input_grads):
                if in_grad is None or not arr.requires_grad:
                    continue
                key = id(arr)
                if key in grads:
                    grads[key] = grads[key] + in_grad
                else:
                    grads[key] = in_grad
                    owners[key] = arr

        for key, grad in grads.items():
            arr = owners[key]
            grad = np.array(grad, dtype=np.float64)
            if grad.shape != arr.shape:
                raise ShapeError("backward", [arr.shape, grad.shape], "gradient does not match its array")
            if not np.all(np.isfinite(grad)):
                label = arr.name or arr.__class__.__name__
                raise NonFiniteError(f"Non-finite gradient reached {label}")
            if arr.is_leaf and arr.grad is not None:
                arr.grad = arr.grad + grad
            else:
                arr.grad = grad


_local = threading.local()


def _tape_stack() -> List[ComputationTape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> ComputationTape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


@contextmanager
def recording(tape: ComputationTape | None = None) -> Iterator[ComputationTape]:
    """Activates a tape for the current thread."""
    tape = tape if tape is not None else ComputationTape()
    stack = _tape_stack()
    stack.append(tape)
    try:
        yield tape
    finally:
        stack.pop()


def backward(output: DenseArray) -> None:
    if output._tape is None:
        raise TapeError("Output was not produced under an active tape.")
    output._tape.backward(output)


# ----------------------------------------------------------------------
# Op registry
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class OpRule:
    forward: Callable[..., np.ndarray]
    backward: Callable[..., Sequence[np.ndarray | None]]
    check: Callable[[str, Sequence[DenseArray], Dict[str, Any]], None] | None = None


_OPS: Dict[str, OpRule] = {}


def register_op(op_kind: str, rule: OpRule) -> None:
    _OPS[op_kind] = rule


def op_kinds() -> List[str]:
    return sorted(_OPS)


def apply(op_kind: str, inputs: Sequence[ArrayLike], **attrs: Any) -> DenseArray:
    """Evaluates a registered op and records it when a tape is active.

    Raises:
        ShapeError: If input shapes violate the op's shape rule.
        DomainError: For log/sqrt of negative input.
    """
    rule = _OPS.get(op_kind)
    if rule is None:
        raise ValueError(f"Unknown op kind: {op_kind}")
    arrays = tuple(as_dense(x) for x in inputs)
    if rule.check is not None:
        rule.check(op_kind, arrays, attrs)
    out = DenseArray._wrap(rule.forward(*[a.values for a in arrays], **attrs))
    tape = active_tape()
    if tape is not None and any(a.requires_grad for a in arrays):
        out.requires_grad = True
        tape.record(TapeRecord(op_kind, arrays, out, dict(attrs), rule.backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _expand_reduced(grad: np.ndarray, shape: Tuple[int, ...], axis: int | None, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(np.reshape(grad, (1,) * len(shape)), shape)
    if not keepdims:
        grad = np.expand_dims(grad, axis)
    return np.broadcast_to(grad, shape)


def _check_broadcast(op_kind: str, arrays: Sequence[DenseArray], attrs: Dict[str, Any]) -> None:
    try:
        np.broadcast_shapes(*(a.shape for a in arrays))
    except ValueError:
        raise ShapeError(op_kind, [a.shape for a in arrays], "shapes do not broadcast") from None


def _check_matmul(op_kind: str, arrays: Sequence[DenseArray], attrs: Dict[str, Any]) -> None:
    a, b = arrays
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(op_kind, [a.shape, b.shape], "inner dimensions must agree")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(op_kind, [a.shape, b.shape], "batch dimensions do not broadcast") from None


def _check_add_rows(op_kind: str, arrays: Sequence[DenseArray], attrs: Dict[str, Any]) -> None:
    x, v = arrays
    if x.ndim != 2 or v.ndim != 1 or x.shape[1] != v.shape[0]:
        raise ShapeError(op_kind, [x.shape, v.shape], "expected (n, k) and (k,)")


def _check_axis(op_kind: str, arrays: Sequence[DenseArray], attrs: Dict[str, Any]) -> None:
    axis = attrs.get("axis")
    ndim = arrays[0].ndim
    if axis is not None and not -ndim <= axis < ndim:
        raise ShapeError(op_kind, [arrays[0].shape], f"axis {axis} out of range")


def _check_concat(op_kind: str, arrays: Sequence[DenseArray], attrs: Dict[str, Any]) -> None:
    if not arrays:
        raise ShapeError(op_kind, [], "needs at least one input")
    axis = attrs["axis"]
    ref = arrays[0].shape
    for arr in arrays[1:]:
        if arr.ndim != len(ref):
            raise ShapeError(op_kind, [ref, arr.shape], "ranks differ")
        for dim, (p, q) in enumerate(zip(ref, arr.shape)):
            if dim != axis % len(ref) and p != q:
                raise ShapeError(op_kind, [ref, arr.shape], f"dimension {dim} differs")


def _check_stack(op_kind: str, arrays: Sequence[DenseArray], attrs: Dict[str, Any]) -> None:
    if not arrays:
        raise ShapeError(op_kind, [], "needs at least one input")
    if any(a.shape != arrays[0].shape for a in arrays):
        raise ShapeError(op_kind, [a.shape for a in arrays], "all inputs must share one shape")


def _check_reshape(op_kind: str, arrays: Sequence[DenseArray], attrs: Dict[str, Any]) -> None:
    target = attrs["shape"]
    if int(np.prod(target)) != arrays[0].size:
        raise ShapeError(op_kind, [arrays[0].shape, tuple(target)], "sizes differ")


def _check_slice(op_kind: str, arrays: Sequence[DenseArray], attrs: Dict[str, Any]) -> None:
    try:
        np.empty(arrays[0].shape, dtype=np.int8)[attrs["index"]]
    except (IndexError, TypeError) as e:
        raise ShapeError(op_kind, [arrays[0].shape], str(e)) from None


def _log_forward(x: np.ndarray) -> np.ndarray:
    if np.any(x <= 0):
        raise DomainError(f"log of non-positive input (min {float(np.min(x))})")
    return np.log(x)


def _sqrt_forward(x: np.ndarray) -> np.ndarray:
    if np.any(x < 0):
        raise DomainError(f"sqrt of negative input (min {float(np.min(x))})")
    return np.sqrt(x)


def _sqrt_backward(g, out, x):
    # Zero subgradient at the origin keeps zero-variance layer-norm inputs finite.
    safe = np.where(out > 0, out, 1.0)
    return (np.where(out > 0, g * 0.5 / safe, 0.0),)


def _concat_backward(g, out, *xs, axis):
    sizes = [x.shape[axis] for x in xs]
    return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


def _slice_backward(g, out, x, index):
    grad = np.zeros_like(x)
    np.add.at(grad, index, g)
    return (grad,)


def _transpose_backward(g, out, x, axes):
    if axes is None:
        return (np.transpose(g),)
    return (np.transpose(g, np.argsort(axes)),)


def _softmax_backward(g, out, x, axis):
    return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)


def _logsumexp_backward(g, out, x, axis, keepdims):
    return (_expand_reduced(g, x.shape, axis, keepdims) * _scipy_softmax(x, axis=axis),)


def _mean_forward(x, axis, keepdims):
    return np.mean(x, axis=axis, keepdims=keepdims)


def _mean_backward(g, out, x, axis, keepdims):
    count = x.size if axis is None else x.shape[axis]
    return (_expand_reduced(g, x.shape, axis, keepdims) / count,)


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


register_op("matmul", OpRule(
    forward=lambda a, b: a @ b,
    backward=lambda g, out, a, b: (_unbroadcast(g @ _swap(b), a.shape), _unbroadcast(_swap(a) @ g, b.shape)),
    check=_check_matmul,
))
register_op("add", OpRule(
    forward=lambda a, b: a + b,
    backward=lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    check=_check_broadcast,
))
register_op("add_rows", OpRule(
    forward=lambda x, v: x + v,
    backward=lambda g, out, x, v: (g, g.sum(axis=0)),
    check=_check_add_rows,
))
register_op("sub", OpRule(
    forward=lambda a, b: a - b,
    backward=lambda g, out, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    check=_check_broadcast,
))
register_op("mul", OpRule(
    forward=lambda a, b: a * b,
    backward=lambda g, out, a, b: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
    check=_check_broadcast,
))
register_op("div", OpRule(
    forward=lambda a, b: a / b,
    backward=lambda g, out, a, b: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)),
    check=_check_broadcast,
))
register_op("neg", OpRule(forward=lambda x: -x, backward=lambda g, out, x: (-g,)))
register_op("scale", OpRule(
    forward=lambda x, factor: x * factor,
    backward=lambda g, out, x, factor: (g * factor,),
))
register_op("sigmoid", OpRule(forward=expit, backward=lambda g, out, x: (g * out * (1.0 - out),)))
register_op("tanh", OpRule(forward=np.tanh, backward=lambda g, out, x: (g * (1.0 - out * out),)))
register_op("exp", OpRule(forward=np.exp, backward=lambda g, out, x: (g * out,)))
register_op("log", OpRule(forward=_log_forward, backward=lambda g, out, x: (g / x,)))
register_op("sqrt", OpRule(forward=_sqrt_forward, backward=_sqrt_backward))
register_op("relu", OpRule(
    forward=lambda x: np.maximum(x, 0.0),
    backward=lambda g, out, x: (g * (x > 0),),
))
register_op("clamp_min", OpRule(
    forward=lambda x, floor: np.maximum(x, floor),
    backward=lambda g, out, x, floor: (g * (x > floor),),
))
register_op("concat", OpRule(
    forward=lambda *xs, axis: np.concatenate(xs, axis=axis),
    backward=_concat_backward,
    check=_check_concat,
))
register_op("stack", OpRule(
    forward=lambda *xs, axis: np.stack(xs, axis=axis),
    backward=lambda g, out, *xs, axis: tuple(np.take(g, i, axis=axis) for i in range(len(xs))),
    check=_check_stack,
))
register_op("slice", OpRule(
    forward=lambda x, index: np.array(x[index]),
    backward=_slice_backward,
    check=_check_slice,
))
register_op("transpose", OpRule(
    forward=lambda x, axes: np.transpose(x, axes),
    backward=_transpose_backward,
))
register_op("reshape", OpRule(
    forward=lambda x, shape: x.reshape(shape),
    backward=lambda g, out, x, shape: (g.reshape(x.shape),),
    check=_check_reshape,
))
register_op("sum", OpRule(
    forward=lambda x, axis, keepdims: np.sum(x, axis=axis, keepdims=keepdims),
    backward=lambda g, out, x, axis, keepdims: (_expand_reduced(g, x.shape, axis, keepdims),),
    check=_check_axis,
))
register_op("mean", OpRule(forward=_mean_forward, backward=_mean_backward, check=_check_axis))
register_op("softmax", OpRule(
    forward=lambda x, axis: _scipy_softmax(x, axis=axis),
    backward=_softmax_backward,
    check=_check_axis,
))
register_op("logsumexp", OpRule(
    forward=lambda x, axis, keepdims: np.asarray(_scipy_logsumexp(x, axis=axis, keepdims=keepdims)),
    backward=_logsumexp_backward,
    check=_check_axis,
))
register_op("sq_norm", OpRule(
    forward=lambda x, axis, keepdims: np.sum(x * x, axis=axis, keepdims=keepdims),
    backward=lambda g, out, x, axis, keepdims: (2.0 * x * _expand_reduced(g, x.shape, axis, keepdims),),
    check=_check_axis,
))


# ----------------------------------------------------------------------
# Functional API
# ----------------------------------------------------------------------

def matmul(a: ArrayLike, b: ArrayLike) -> DenseArray:
    return apply("matmul", [a, b])


def add(a: ArrayLike, b: ArrayLike) -> DenseArray:
    return apply("add", [a, b])


def add_rows(x: ArrayLike, v: ArrayLike) -> DenseArray:
    """Adds the vector `v` to every row of the matrix `x`."""
    return apply("add_rows", [x, v])


def sub(a: ArrayLike, b: ArrayLike) -> DenseArray:
    return apply("sub", [a, b])


def mul(a: ArrayLike, b: ArrayLike) -> DenseArray:
    return apply("mul", [a, b])


def div(a: ArrayLike, b: ArrayLike) -> DenseArray:
    return apply("div", [a, b])


def neg(x: ArrayLike) -> DenseArray:
    return apply("neg", [x])


def scale(x: ArrayLike, factor: float) -> DenseArray:
    return apply("scale", [x], factor=float(factor))


def sigmoid(x: ArrayLike) -> DenseArray:
    return apply("sigmoid", [x])


def tanh(x: ArrayLike) -> DenseArray:
    return apply("tanh", [x])


def exp(x: ArrayLike) -> DenseArray:
    return apply("exp", [x])


def log(x: ArrayLike) -> DenseArray:
    return apply("log", [x])


def sqrt(x: ArrayLike) -> DenseArray:
    return apply("sqrt", [x])


def relu(x: ArrayLike) -> DenseArray:
    return apply("relu", [x])


def clamp_min(x: ArrayLike, floor: float) -> DenseArray:
    return apply("clamp_min", [x], floor=float(floor))


def concat(arrays: Sequence[ArrayLike], axis: int = 0) -> DenseArray:
    return apply("concat", list(arrays), axis=axis)


def stack(arrays: Sequence[ArrayLike], axis: int = 0) -> DenseArray:
    return apply("stack", list(arrays), axis=axis)


def take_slice(x: ArrayLike, index: Any) -> DenseArray:
    return apply("slice", [x], index=index)


def transpose(x: ArrayLike, axes: Sequence[int] | None = None) -> DenseArray:
    return apply("transpose", [x], axes=None if axes is None else tuple(axes))


def reshape(x: ArrayLike, shape: Sequence[int]) -> DenseArray:
    return apply("reshape", [x], shape=tuple(shape))


def reduce_sum(x: ArrayLike, axis: int | None = None, keepdims: bool = False) -> DenseArray:
    return apply("sum", [x], axis=axis, keepdims=keepdims)


def reduce_mean(x: ArrayLike, axis: int | None = None, keepdims: bool = False) -> DenseArray:
    return apply("mean", [x], axis=axis, keepdims=keepdims)


def softmax(x: ArrayLike, axis: int = -1) -> DenseArray:
    """Max-subtracted softmax along `axis`."""
    return apply("softmax", [x], axis=axis)


def logsumexp(x: ArrayLike, axis: int | None = None, keepdims: bool = False) -> DenseArray:
    return apply("logsumexp", [x], axis=axis, keepdims=keepdims)


def sq_norm(x: ArrayLike, axis: int | None = None, keepdims: bool = False) -> DenseArray:
    """Squared L2 norm along `axis` (all elements when None)."""
    return apply("sq_norm", [x], axis=axis, keepdims=keepdims)
