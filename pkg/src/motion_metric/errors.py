# src/motion_metric/errors.py

"""Exception hierarchy shared by every motion_metric module."""

from typing import Sequence, Tuple


class MotionMetricError(Exception):
    """Base class for all errors raised by the package."""


class ShapeError(MotionMetricError, ValueError):
    """Raised when array shapes do not conform to an operation's shape rule."""

    def __init__(self, op_kind: str, shapes: Sequence[Tuple[int, ...]], detail: str = ""):
        self.op_kind = op_kind
        self.shapes = [tuple(s) for s in shapes]
        shapes_str = " vs ".join(str(s) for s in self.shapes)
        message = f"Shape mismatch in '{op_kind}': {shapes_str}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class DomainError(MotionMetricError, ValueError):
    """Raised when an operation receives inputs outside its mathematical domain."""


class TapeError(MotionMetricError, RuntimeError):
    """Raised on misuse of a computation tape (non-scalar output, double backward)."""


class NonFiniteError(MotionMetricError, FloatingPointError):
    """Raised when a value or gradient becomes NaN or infinite."""


class BvhParseError(MotionMetricError, ValueError):
    """Raised when a BVH document cannot be parsed."""

    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class EpisodeError(MotionMetricError, ValueError):
    """Raised when a dataset cannot supply the requested episode."""


class CheckpointError(MotionMetricError, ValueError):
    """Raised when a checkpoint has the wrong version or mismatching shapes."""


class ConfigError(MotionMetricError, ValueError):
    """Raised when a configuration field is missing or invalid."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class EvaluationError(MotionMetricError, ValueError):
    """Raised when the evaluation protocol cannot be applied to the given inputs."""
