"""
Tucker-L2E Errors - Exception hierarchy shared by every module.

Each exception keeps the values that triggered it as attributes so callers
(and the CLI) can report them without parsing messages.
"""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING, Any

if TYPE_CHECKING:
    import numpy as np

    from .l2e import L2EModel


class TuckerL2EError(Exception):
    """Base class for all library errors."""


class ShapeMismatchError(TuckerL2EError, ValueError):
    """Operands disagree on dims or matrix shape."""

    def __init__(self, message: str, expected: Any = None, found: Any = None):
        self.expected = expected
        self.found = found
        super().__init__(message)


class ModeError(TuckerL2EError, IndexError):
    """Mode index outside 0..order-1."""

    def __init__(self, mode: int, order: int):
        self.mode = mode
        self.order = order
        super().__init__(f"mode {mode + 1} out of range for a tensor of order {order}")


class RankError(TuckerL2EError, ValueError):
    """
    Requested rank incompatible with the data.

    `mode` is 0-based; the message names it 1-based like the CLI does.
    """

    def __init__(
        self, rank: int, dim: int | None = None, mode: int | None = None, reason: str = ""
    ):
        self.rank = rank
        self.dim = dim
        self.mode = mode
        if reason:
            message = reason
        elif mode is not None and dim is not None:
            message = f"rank {rank} in mode {mode + 1} exceeds dimension {dim}"
        else:
            message = f"invalid rank {rank}"
        super().__init__(message)


class NonFiniteError(TuckerL2EError, ValueError):
    """Input contains NaN or infinite values where finite ones are required."""


class DegenerateDataError(TuckerL2EError, ValueError):
    """Data carries too little information for the requested operation."""


class OracleError(TuckerL2EError, FloatingPointError):
    """Objective oracle returned a non-finite value or gradient."""

    def __init__(self, message: str, x: np.ndarray | None = None):
        self.x = x
        super().__init__(message)


class LowerBoundViolation(TuckerL2EError, ArithmeticError):
    """Objective dropped below its analytic lower bound."""

    def __init__(self, value: float, bound: float):
        self.value = value
        self.bound = bound
        super().__init__(f"objective {value!r} is below its lower bound {bound!r}")


class FitError(TuckerL2EError, RuntimeError):
    """Robust fit aborted; `partial` holds the model at the last feasible iterate."""

    def __init__(self, message: str, partial: L2EModel | None = None):
        self.partial = partial
        super().__init__(message)


class TensorFileError(TuckerL2EError, ValueError):
    """Malformed tensor file."""

    def __init__(self, path: str | Path, line: int, message: str):
        self.path = Path(path)
        self.line = line
        self.reason = message
        super().__init__(f"{path}:{line}: {message}")
