"""
Tucker-L2E Baselines - HOSVD and HOOI (Tucker-ALS).

Least-squares Tucker fits. They seed the robust fit and serve as the
nonrobust reference in simulations.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from pydantic import BaseModel, Field

from .errors import RankError
from .tensors import (
    DenseMatrix,
    DenseTensor,
    TuckerFactors,
    check_finite,
    multi_mode_dot,
    unfold,
    validate_rank,
)

logger = logging.getLogger(__name__)

# Use the Gram matrix when the unfolding is at least this many times wider than tall.
GRAM_ASPECT = 4


class HooiConfig(BaseModel):
    """Settings for higher-order orthogonal iteration."""

    rank: tuple[int, ...] = Field(..., min_length=1)
    max_iters: int = Field(50, ge=1)
    fit_tolerance: float = Field(1e-6, ge=0.0)


@dataclass
class HooiResult:
    factors: TuckerFactors
    errors: list[float] = field(default_factory=list)
    sweeps: int = 0
    converged: bool = False


def _fix_signs(U: np.ndarray, V: np.ndarray | None = None) -> None:
    """Make the largest-magnitude entry of each column of U positive (in place)."""
    pivots = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivots, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U *= signs
    if V is not None:
        V *= signs


def leading_left_vectors(M: np.ndarray, k: int) -> np.ndarray:
    """
    Top-k left singular vectors of M, sign-normalized.

    Fat matrices go through the eigendecomposition of M M^T, everything else
    through a thin SVD.
    """
    rows, cols = M.shape
    if cols >= GRAM_ASPECT * rows:
        evals, evecs = np.linalg.eigh(M @ M.T)
        U = evecs[:, np.argsort(evals)[::-1][:k]].copy()
    else:
        U = np.linalg.svd(M, full_matrices=False)[0][:, :k].copy()
    _fix_signs(U)
    return U


def truncated_svd(
    M: DenseMatrix, k: int
) -> tuple[DenseMatrix, np.ndarray, DenseMatrix]:
    """
    Rank-k truncated SVD.

    Args:
        M: Matrix to factor
        k: Number of singular triplets, 1 <= k <= min(rows, cols)

    Returns:
        (U, sigma, V) with U: rows x k, sigma nonincreasing, V: cols x k
    """
    if not 1 <= k <= min(M.rows, M.cols):
        raise RankError(k, reason=f"k={k} must lie in 1..{min(M.rows, M.cols)}")
    arr = M.array
    check_finite(arr, "matrix")
    U, sigma, Vt = np.linalg.svd(arr, full_matrices=False)
    U = U[:, :k].copy()
    V = Vt[:k].T.copy()
    _fix_signs(U, V)
    return DenseMatrix.from_array(U), sigma[:k].copy(), DenseMatrix.from_array(V)


def _core(array: np.ndarray, factors: list[np.ndarray]) -> np.ndarray:
    return multi_mode_dot(array, factors, transpose=True)


def _prepare(X: DenseTensor, rank: tuple[int, ...]) -> tuple[np.ndarray, tuple[int, ...]]:
    rank = validate_rank(rank, X.dims)
    check_finite(X.data, "tensor")
    return X.array, rank


def hosvd(X: DenseTensor, rank: tuple[int, ...]) -> TuckerFactors:
    """Truncated higher-order SVD: one truncated SVD per matricization."""
    array, rank = _prepare(X, rank)
    factors = [leading_left_vectors(unfold(array, n), r) for n, r in enumerate(rank)]
    return TuckerFactors.from_arrays(_core(array, factors), factors)


def _error(array: np.ndarray, core: np.ndarray, factors: list[np.ndarray]) -> float:
    return float(np.linalg.norm(array - multi_mode_dot(core, factors)))


def run_hooi(
    X: DenseTensor, cfg: HooiConfig, init: TuckerFactors | None = None
) -> HooiResult:
    """
    Higher-order orthogonal iteration with its per-sweep error trace.

    `errors[0]` is the error of the starting point, then one entry per sweep.
    Stops when the relative fit 1 - err/||X|| changes by less than
    cfg.fit_tolerance or after cfg.max_iters sweeps.
    """
    array, rank = _prepare(X, cfg.rank)
    if init is None:
        init = hosvd(X, rank)
    elif init.ranks != rank or init.dims != X.dims:
        raise RankError(
            len(rank), reason=f"initial factors have ranks {init.ranks}, expected {rank}"
        )
    factors = [A.array.copy() for A in init.factors]
    core = _core(array, factors)
    norm_x = float(np.linalg.norm(array)) or 1.0

    result = HooiResult(factors=init, errors=[_error(array, core, factors)])
    for sweep in range(1, cfg.max_iters + 1):
        for n, r in enumerate(rank):
            projected = multi_mode_dot(array, factors, skip=n, transpose=True)
            factors[n] = leading_left_vectors(unfold(projected, n), r)
        core = _core(array, factors)
        result.errors.append(_error(array, core, factors))
        result.sweeps = sweep
        change = abs(result.errors[-2] - result.errors[-1]) / norm_x
        logger.debug("hooi sweep %d: error %.6e", sweep, result.errors[-1])
        if change < cfg.fit_tolerance:
            result.converged = True
            break

    result.factors = TuckerFactors.from_arrays(core, factors)
    return result


def hooi(
    X: DenseTensor, cfg: HooiConfig, init: TuckerFactors | None = None
) -> TuckerFactors:
    return run_hooi(X, cfg, init).factors
