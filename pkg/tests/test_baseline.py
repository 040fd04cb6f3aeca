"""Tests for the least-squares baselines (truncated SVD, HOSVD, HOOI)."""

import numpy as np
import pytest
from pydantic import ValidationError

from tuckerl2e.baseline import (
    HooiConfig,
    hooi,
    hosvd,
    leading_left_vectors,
    run_hooi,
    truncated_svd,
)
from tuckerl2e.errors import RankError
from tuckerl2e.tensors import (
    DenseMatrix,
    DenseTensor,
    KruskalFactors,
    TuckerFactors,
    kruskal_to_full,
    tucker_to_full,
)


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def _exact_tucker(dims, ranks, seed=0) -> DenseTensor:
    rng = np.random.default_rng(seed)
    core = rng.standard_normal(ranks)
    factors = [rng.standard_normal((d, r)) for d, r in zip(dims, ranks)]
    return tucker_to_full(TuckerFactors.from_arrays(core, factors))


class TestTruncatedSvd:
    """Test the rank-k truncated SVD."""

    def test_diagonal(self):
        M = DenseMatrix.from_array(np.diag([3.0, 2.0, 1.0]))
        U, sigma, V = truncated_svd(M, 2)
        assert np.allclose(sigma, [3.0, 2.0])
        approx = U.array @ np.diag(sigma) @ V.array.T
        assert np.isclose(np.linalg.norm(M.array - approx), 1.0)

    def test_rank_one(self):
        u = np.array([1.0, -2.0, 2.0])
        v = np.array([3.0, 4.0])
        M = DenseMatrix.from_array(np.outer(u, v))
        U, sigma, V = truncated_svd(M, 1)
        assert np.isclose(sigma[0], np.linalg.norm(u) * np.linalg.norm(v))
        assert np.allclose(sigma[0] * np.outer(U.array[:, 0], V.array[:, 0]), M.array)

    def test_error_matches_eigenvalue_oracle(self):
        rng = np.random.default_rng(7)
        M = DenseMatrix.from_array(rng.standard_normal((6, 4)))
        U, sigma, V = truncated_svd(M, 3)
        residual = np.linalg.norm(M.array - U.array @ np.diag(sigma) @ V.array.T)
        smallest = np.linalg.eigvalsh(M.array.T @ M.array)[0]
        assert np.isclose(residual, np.sqrt(smallest), rtol=1e-8)

    def test_sign_convention(self):
        rng = np.random.default_rng(8)
        U, _, _ = truncated_svd(DenseMatrix.from_array(rng.standard_normal((5, 5))), 3)
        arr = U.array
        for j in range(3):
            assert arr[np.argmax(np.abs(arr[:, j])), j] > 0

    def test_k_out_of_range(self):
        with pytest.raises(RankError):
            truncated_svd(DenseMatrix.from_array(np.ones((3, 2))), 3)

    def test_gram_route_matches_svd(self):
        rng = np.random.default_rng(9)
        M = rng.standard_normal((3, 40))
        U = leading_left_vectors(M, 2)
        reference = np.linalg.svd(M)[0][:, :2]
        # Same subspace; columns may differ only by sign.
        assert np.allclose(np.abs(U.T @ reference), np.eye(2), atol=1e-10)


class TestHosvd:
    """Test truncated higher-order SVD."""

    def test_full_rank_is_exact(self):
        rng = np.random.default_rng(10)
        X = DenseTensor.from_array(rng.standard_normal((3, 4, 5)))
        T = hosvd(X, (3, 4, 5))
        assert _relative_error(tucker_to_full(T).data, X.data) < 1e-12

    def test_rank_one_kruskal(self):
        arrays = [
            np.array([[1.0], [2.0]]),
            np.array([[0.5], [-1.0], [3.0]]),
            np.array([[2.0], [1.0]]),
        ]
        X = kruskal_to_full(
            KruskalFactors(
                weights=np.ones(1), factors=tuple(DenseMatrix.from_array(a) for a in arrays)
            )
        )
        T = hosvd(X, (1, 1, 1))
        assert _relative_error(tucker_to_full(T).data, X.data) < 1e-12

    def test_exact_low_rank_recovery(self):
        X = _exact_tucker((6, 6, 6), (2, 2, 2))
        T = hosvd(X, (2, 2, 2))
        assert T.ranks == (2, 2, 2)
        assert _relative_error(tucker_to_full(T).data, X.data) < 1e-10

    def test_orthonormal_factors(self):
        X = _exact_tucker((5, 6, 7), (2, 3, 2), seed=1)
        for A in hosvd(X, (2, 3, 2)).factors:
            assert np.allclose(A.array.T @ A.array, np.eye(A.cols), atol=1e-12)

    def test_rank_exceeds_dim(self):
        with pytest.raises(RankError):
            hosvd(DenseTensor.zeros((3, 3, 3)), (4, 1, 1))


class TestHooi:
    """Test higher-order orthogonal iteration."""

    def test_exact_low_rank_converges_fast(self):
        X = _exact_tucker((6, 6, 6), (2, 2, 2), seed=2)
        result = run_hooi(X, HooiConfig(rank=(2, 2, 2)))
        assert result.converged
        assert result.sweeps <= 2
        assert _relative_error(tucker_to_full(result.factors).data, X.data) < 1e-10

    def test_full_rank_is_exact(self):
        rng = np.random.default_rng(11)
        X = DenseTensor.from_array(rng.standard_normal((3, 3, 4)))
        T = hooi(X, HooiConfig(rank=(3, 3, 4)))
        assert _relative_error(tucker_to_full(T).data, X.data) < 1e-12

    def test_error_trace_nonincreasing(self):
        rng = np.random.default_rng(12)
        X = DenseTensor.from_array(rng.standard_normal((6, 7, 8)))
        result = run_hooi(X, HooiConfig(rank=(2, 2, 2), max_iters=20, fit_tolerance=0.0))
        assert len(result.errors) == result.sweeps + 1
        tol = 1e-10 * np.linalg.norm(X.data)
        assert all(b <= a + tol for a, b in zip(result.errors, result.errors[1:]))

    def test_improves_on_hosvd(self):
        rng = np.random.default_rng(13)
        X = DenseTensor.from_array(rng.standard_normal((6, 6, 6)))
        start = hosvd(X, (2, 2, 2))
        refined = hooi(X, HooiConfig(rank=(2, 2, 2)), init=start)
        err_start = np.linalg.norm(tucker_to_full(start).data - X.data)
        err_refined = np.linalg.norm(tucker_to_full(refined).data - X.data)
        assert err_refined <= err_start + 1e-10

    def test_init_shape_mismatch(self):
        X = _exact_tucker((4, 4, 4), (2, 2, 2))
        with pytest.raises(RankError):
            hooi(X, HooiConfig(rank=(2, 2, 2)), init=hosvd(X, (1, 1, 1)))

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            HooiConfig(rank=(2, 2), max_iters=0)
