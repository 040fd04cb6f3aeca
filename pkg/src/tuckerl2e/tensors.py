"""
Tucker-L2E Tensors - Dense N-way arrays and multilinear algebra.

Storage is a flat float64 vector with the FIRST index varying fastest, so the
linear offset of element (i_1, ..., i_N) is sum_k i_k * prod_{k'<k} I_k'
(0-based). With this layout vec(X) stacks the columns of the mode-1
matricization, and every reshape below uses numpy's Fortran order.

Modes are 0-based throughout the API. Messages meant for people name them
1-based ("mode 1").

    X_(n)        matricize(X, n)
    X x_n A      n_mode_product(X, A, n)
    [[G; A..]]   tucker_to_full(TuckerFactors(G, [A1, ..., AN]))
    [[w; A..]]   kruskal_to_full(KruskalFactors(w, [A1, ..., AN]))
"""

from __future__ import annotations

import math
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .errors import ModeError, NonFiniteError, RankError, ShapeMismatchError

# === Types ===


def _frozen_vector(data: object, expected: int, what: str) -> np.ndarray:
    vec = np.array(data, dtype=np.float64)
    if vec.ndim != 1:
        raise ShapeMismatchError(
            f"{what} data must be a flat vector, got {vec.ndim}-D", 1, vec.ndim
        )
    if vec.size != expected:
        raise ShapeMismatchError(
            f"{what} data has {vec.size} values, expected {expected}", expected, vec.size
        )
    vec.setflags(write=False)
    return vec


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """N-way real tensor, immutable once built."""

    dims: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 1:
            raise ShapeMismatchError("tensor order must be at least 1")
        if any(d < 1 for d in dims):
            raise ShapeMismatchError(f"all dims must be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", _frozen_vector(self.data, math.prod(dims), "tensor"))

    @classmethod
    def from_array(cls, array: np.ndarray) -> DenseTensor:
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        return cls(dims=arr.shape, data=arr.ravel(order="F"))

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> DenseTensor:
        return cls(dims=tuple(dims), data=np.zeros(math.prod(dims)))

    @classmethod
    def ones(cls, dims: Sequence[int]) -> DenseTensor:
        return cls(dims=tuple(dims), data=np.ones(math.prod(dims)))

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def array(self) -> np.ndarray:
        """Read-only N-d view in Fortran order."""
        return self.data.reshape(self.dims, order="F")


@dataclass(frozen=True, eq=False)
class DenseMatrix:
    """Real matrix stored column by column."""

    rows: int
    cols: int
    data: np.ndarray

    def __post_init__(self) -> None:
        rows, cols = int(self.rows), int(self.cols)
        if rows < 1 or cols < 1:
            raise ShapeMismatchError(f"matrix shape must be positive, got {rows}x{cols}")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "data", _frozen_vector(self.data, rows * cols, "matrix"))

    @classmethod
    def from_array(cls, array: np.ndarray) -> DenseMatrix:
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise ShapeMismatchError(f"expected a 2-D array, got {arr.ndim}-D", 2, arr.ndim)
        return cls(rows=arr.shape[0], cols=arr.shape[1], data=arr.ravel(order="F"))

    @classmethod
    def identity(cls, n: int) -> DenseMatrix:
        return cls.from_array(np.eye(n))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def array(self) -> np.ndarray:
        return self.data.reshape((self.rows, self.cols), order="F")

    @property
    def T(self) -> DenseMatrix:  # noqa: N802
        return DenseMatrix.from_array(self.array.T)

    def matmul(self, other: DenseMatrix) -> DenseMatrix:
        if self.cols != other.rows:
            raise ShapeMismatchError(
                f"cannot multiply {self.rows}x{self.cols} by {other.rows}x{other.cols}",
                self.cols,
                other.rows,
            )
        return DenseMatrix.from_array(self.array @ other.array)


@dataclass(frozen=True, eq=False)
class TuckerFactors:
    """
    Tucker model [[G; A1, ..., AN]].

    Factor n is I_n x r_n and core dim n equals r_n. Factors need not have
    orthonormal columns.
    """

    core: DenseTensor
    factors: tuple[DenseMatrix, ...]

    def __post_init__(self) -> None:
        factors = tuple(self.factors)
        object.__setattr__(self, "factors", factors)
        if len(factors) != self.core.order:
            raise ShapeMismatchError(
                f"core has order {self.core.order} but {len(factors)} factors were given",
                self.core.order,
                len(factors),
            )
        for n, (factor, r) in enumerate(zip(factors, self.core.dims)):
            if factor.cols != r:
                raise ShapeMismatchError(
                    f"factor {n + 1} has {factor.cols} columns, core dim {n + 1} is {r}",
                    r,
                    factor.cols,
                )

    @property
    def ranks(self) -> tuple[int, ...]:
        return self.core.dims

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.rows for f in self.factors)

    @property
    def order(self) -> int:
        return self.core.order

    @classmethod
    def from_arrays(cls, core: np.ndarray, factors: Sequence[np.ndarray]) -> TuckerFactors:
        return cls(
            core=DenseTensor.from_array(core),
            factors=tuple(DenseMatrix.from_array(a) for a in factors),
        )


@dataclass(frozen=True, eq=False)
class KruskalFactors:
    """CP model: sum_i w_i a_i^(1) o ... o a_i^(N)."""

    weights: np.ndarray
    factors: tuple[DenseMatrix, ...]

    def __post_init__(self) -> None:
        factors = tuple(self.factors)
        if not factors:
            raise ShapeMismatchError("a Kruskal model needs at least one factor")
        weights = _frozen_vector(self.weights, factors[0].cols, "weights")
        for n, factor in enumerate(factors):
            if factor.cols != weights.size:
                raise ShapeMismatchError(
                    f"factor {n + 1} has {factor.cols} columns, expected {weights.size}",
                    weights.size,
                    factor.cols,
                )
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "weights", weights)

    @property
    def rank(self) -> int:
        return int(self.weights.size)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.rows for f in self.factors)


# === Validation ===


def check_mode(n: int, order: int) -> int:
    if not 0 <= n < order:
        raise ModeError(n, order)
    return n


def check_finite(values: np.ndarray, what: str = "input") -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{what} contains NaN or infinite values")


def validate_rank(rank: Sequence[int], dims: Sequence[int]) -> tuple[int, ...]:
    """
    Check a Tucker-rank against tensor dims.

    Returns:
        The rank as a tuple of ints

    Raises:
        RankError: wrong length, or r_n outside 1..I_n for some mode
    """
    rank = tuple(int(r) for r in rank)
    if len(rank) != len(dims):
        raise RankError(
            len(rank),
            reason=f"rank has {len(rank)} entries but the tensor has order {len(dims)}",
        )
    for n, (r, dim) in enumerate(zip(rank, dims)):
        if r < 1:
            raise RankError(r, dim, n, reason=f"rank {r} in mode {n + 1} must be at least 1")
        if r > dim:
            raise RankError(r, dim, n)
    return rank


# === Array kernels ===
# Shared by the typed wrappers below and by the hot loops in l2e/baseline.


def unfold(array: np.ndarray, n: int) -> np.ndarray:
    return np.moveaxis(array, n, 0).reshape(array.shape[n], -1, order="F")


def fold(matrix: np.ndarray, dims: Sequence[int], n: int) -> np.ndarray:
    rest = [d for k, d in enumerate(dims) if k != n]
    return np.moveaxis(matrix.reshape((matrix.shape[0], *rest), order="F"), 0, n)


def mode_dot(array: np.ndarray, matrix: np.ndarray, n: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(matrix, array, axes=(1, n)), 0, n)


def multi_mode_dot(
    array: np.ndarray,
    matrices: Sequence[np.ndarray],
    skip: int | None = None,
    transpose: bool = False,
) -> np.ndarray:
    """array x_1 M1 x_2 M2 ... over every mode except `skip`."""
    out = array
    for n, matrix in enumerate(matrices):
        if n == skip:
            continue
        out = mode_dot(out, matrix.T if transpose else matrix, n)
    return out


# === Operations ===


def matricize(X: DenseTensor, n: int) -> DenseMatrix:
    """
    Mode-n matricization X_(n).

    Element (i_1..i_N) maps to row i_n and column sum_{k != n} i_k J_k with
    J_k the product of the dims of the modes before k, skipping n.
    """
    check_mode(n, X.order)
    return DenseMatrix.from_array(unfold(X.array, n))


def tensorize(M: DenseMatrix, dims: Sequence[int], n: int) -> DenseTensor:
    """Inverse of matricize."""
    dims = tuple(int(d) for d in dims)
    check_mode(n, len(dims))
    expected = (dims[n], math.prod(dims) // dims[n])
    if M.shape != expected:
        raise ShapeMismatchError(
            f"matrix is {M.rows}x{M.cols}, mode-{n + 1} unfolding of {dims} is "
            f"{expected[0]}x{expected[1]}",
            expected,
            M.shape,
        )
    return DenseTensor(dims=dims, data=fold(M.array, dims, n).ravel(order="F"))


def n_mode_product(X: DenseTensor, A: DenseMatrix, n: int) -> DenseTensor:
    check_mode(n, X.order)
    if A.cols != X.dims[n]:
        raise ShapeMismatchError(
            f"matrix has {A.cols} columns but mode {n + 1} has dimension {X.dims[n]}",
            X.dims[n],
            A.cols,
        )
    return DenseTensor.from_array(mode_dot(X.array, A.array, n))


def _same_dims(X: DenseTensor, Y: DenseTensor) -> None:
    if X.dims != Y.dims:
        raise ShapeMismatchError(f"dims differ: {X.dims} vs {Y.dims}", X.dims, Y.dims)


def hadamard(X: DenseTensor, Y: DenseTensor) -> DenseTensor:
    _same_dims(X, Y)
    return DenseTensor(dims=X.dims, data=X.data * Y.data)


def elementwise(X: DenseTensor, f: Callable[[np.ndarray], np.ndarray]) -> DenseTensor:
    """Apply a vectorized function to every entry."""
    return DenseTensor(dims=X.dims, data=np.asarray(f(X.data), dtype=np.float64))


def square(X: DenseTensor) -> DenseTensor:
    return elementwise(X, np.square)


def exp(X: DenseTensor) -> DenseTensor:
    return elementwise(X, np.exp)


def affine(X: DenseTensor, a: float, b: float = 0.0) -> DenseTensor:
    return elementwise(X, lambda v: a * v + b)


def tensor_sum(X: DenseTensor) -> float:
    return float(np.sum(X.data, dtype=np.longdouble))


def frobenius_norm(X: DenseTensor) -> float:
    wide = X.data.astype(np.longdouble)
    return float(np.sqrt(np.sum(wide * wide)))


def l1_norm(X: DenseTensor) -> float:
    return float(np.sum(np.abs(X.data), dtype=np.longdouble))


def superdiagonal(weights: Sequence[float] | np.ndarray, order: int) -> DenseTensor:
    """Core with weights on the superdiagonal and zeros elsewhere."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    core = np.zeros((w.size,) * order)
    idx = np.arange(w.size)
    core[(idx,) * order] = w
    return DenseTensor.from_array(core)


def tucker_to_full(T: TuckerFactors) -> DenseTensor:
    return DenseTensor.from_array(multi_mode_dot(T.core.array, [A.array for A in T.factors]))


def kruskal_to_full(K: KruskalFactors) -> DenseTensor:
    arrays = [A.array for A in K.factors]
    full = np.zeros(K.dims)
    for i, w in enumerate(K.weights):
        full += w * reduce(np.multiply.outer, [A[:, i] for A in arrays])
    return DenseTensor.from_array(full)


def numerical_rank(M: DenseMatrix | np.ndarray, rtol: float = 1e-10) -> int:
    """Count singular values above rtol * sigma_max."""
    arr = M.array if isinstance(M, DenseMatrix) else np.asarray(M, dtype=np.float64)
    sigma = np.linalg.svd(arr, compute_uv=False)
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0
    return int(np.count_nonzero(sigma > rtol * sigma[0]))


def matricization_ranks(X: DenseTensor, rtol: float = 1e-10) -> tuple[int, ...]:
    return tuple(numerical_rank(unfold(X.array, n), rtol) for n in range(X.order))
