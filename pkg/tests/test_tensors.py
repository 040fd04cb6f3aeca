"""Tests for dense tensors and multilinear algebra."""

import numpy as np
import pytest

from tuckerl2e.errors import ModeError, NonFiniteError, RankError, ShapeMismatchError
from tuckerl2e.tensors import (
    DenseMatrix,
    DenseTensor,
    KruskalFactors,
    TuckerFactors,
    affine,
    check_finite,
    exp,
    frobenius_norm,
    hadamard,
    kruskal_to_full,
    l1_norm,
    matricization_ranks,
    matricize,
    n_mode_product,
    numerical_rank,
    square,
    superdiagonal,
    tensor_sum,
    tensorize,
    tucker_to_full,
    validate_rank,
)


def _cube() -> DenseTensor:
    return DenseTensor(dims=(2, 2, 2), data=np.arange(1.0, 9.0))


class TestDenseTensor:
    """Test storage layout and construction."""

    def test_first_index_fastest(self):
        X = _cube()
        assert X.array[1, 0, 0] == 2.0
        assert X.array[0, 1, 0] == 3.0
        assert X.array[0, 0, 1] == 5.0

    def test_from_array_matches_layout(self):
        arr = np.arange(24.0).reshape((2, 3, 4))
        X = DenseTensor.from_array(arr)
        assert X.dims == (2, 3, 4)
        assert np.array_equal(X.array, arr)
        assert X.data[1] == arr[1, 0, 0]

    def test_data_is_read_only(self):
        X = _cube()
        with pytest.raises(ValueError):
            X.data[0] = 10.0

    def test_wrong_value_count(self):
        with pytest.raises(ShapeMismatchError):
            DenseTensor(dims=(2, 3), data=np.zeros(5))

    def test_zero_dim_rejected(self):
        with pytest.raises(ShapeMismatchError):
            DenseTensor(dims=(2, 0), data=np.zeros(0))

    def test_order_and_size(self):
        X = DenseTensor.zeros((3, 4, 5))
        assert X.order == 3
        assert X.size == 60


class TestMatricize:
    """Test mode-n unfolding."""

    def test_mode_one(self):
        M = matricize(_cube(), 0)
        assert np.array_equal(M.array, [[1, 3, 5, 7], [2, 4, 6, 8]])

    def test_mode_two(self):
        M = matricize(_cube(), 1)
        assert np.array_equal(M.array, [[1, 2, 5, 6], [3, 4, 7, 8]])

    def test_mode_one_data_is_vec(self):
        X = _cube()
        assert np.array_equal(matricize(X, 0).data, X.data)

    def test_order_one(self):
        X = DenseTensor(dims=(3,), data=[1.0, 2.0, 3.0])
        M = matricize(X, 0)
        assert M.shape == (3, 1)
        assert np.array_equal(M.data, X.data)

    def test_bad_mode(self):
        with pytest.raises(ModeError) as exc:
            matricize(_cube(), 3)
        assert "mode 4" in str(exc.value)


class TestTensorize:
    """Test folding back to a tensor."""

    def test_roundtrip_cube(self):
        X = _cube()
        for n in range(3):
            assert np.array_equal(tensorize(matricize(X, n), X.dims, n).data, X.data)

    def test_roundtrip_random(self):
        rng = np.random.default_rng(0)
        X = DenseTensor.from_array(rng.standard_normal((3, 4, 5)))
        for n in range(3):
            assert np.array_equal(tensorize(matricize(X, n), X.dims, n).data, X.data)

    def test_order_one(self):
        M = DenseMatrix.from_array(np.array([[4.0], [5.0]]))
        X = tensorize(M, (2,), 0)
        assert X.dims == (2,)
        assert np.array_equal(X.data, [4.0, 5.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            tensorize(DenseMatrix.from_array(np.zeros((2, 3))), (2, 2, 2), 0)


class TestModeProduct:
    """Test the n-mode product."""

    def test_identity(self):
        X = _cube()
        Y = n_mode_product(X, DenseMatrix.identity(2), 1)
        assert np.array_equal(Y.data, X.data)

    def test_matches_unfolded_product(self):
        rng = np.random.default_rng(1)
        X = DenseTensor.from_array(rng.standard_normal((3, 4, 2)))
        A = DenseMatrix.from_array(rng.standard_normal((5, 4)))
        Y = n_mode_product(X, A, 1)
        expected = tensorize(A.matmul(matricize(X, 1)), (3, 5, 2), 1)
        assert Y.dims == (3, 5, 2)
        assert np.allclose(Y.data, expected.data, rtol=1e-13, atol=1e-13)

    def test_distinct_modes_commute(self):
        rng = np.random.default_rng(2)
        X = DenseTensor.from_array(rng.standard_normal((3, 4, 2)))
        A = DenseMatrix.from_array(rng.standard_normal((5, 3)))
        B = DenseMatrix.from_array(rng.standard_normal((6, 4)))
        first = n_mode_product(n_mode_product(X, A, 0), B, 1)
        second = n_mode_product(n_mode_product(X, B, 1), A, 0)
        assert first.dims == second.dims == (5, 6, 2)
        assert np.allclose(first.data, second.data, rtol=1e-12, atol=1e-12)

    def test_same_mode_collapses_to_matrix_product(self):
        rng = np.random.default_rng(3)
        X = DenseTensor.from_array(rng.standard_normal((3, 4, 2)))
        A = rng.standard_normal((5, 4))
        B = rng.standard_normal((3, 5))
        chained = n_mode_product(
            n_mode_product(X, DenseMatrix.from_array(A), 1), DenseMatrix.from_array(B), 1
        )
        collapsed = n_mode_product(X, DenseMatrix.from_array(B @ A), 1)
        assert chained.dims == (3, 3, 2)
        assert np.allclose(chained.data, collapsed.data, rtol=1e-12, atol=1e-12)

    def test_column_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            n_mode_product(_cube(), DenseMatrix.from_array(np.ones((2, 3))), 0)


class TestElementwise:
    """Test entrywise helpers and norms."""

    def test_hadamard(self):
        X = DenseTensor.from_array(np.array([[1.0, 2.0], [3.0, 4.0]]))
        Y = DenseTensor.from_array(np.array([[2.0, 0.0], [1.0, 3.0]]))
        assert np.array_equal(hadamard(X, Y).array, [[2, 0], [3, 12]])

    def test_hadamard_ones_and_zeros(self):
        X = _cube()
        assert np.array_equal(hadamard(X, DenseTensor.ones(X.dims)).data, X.data)
        assert not np.any(hadamard(X, DenseTensor.zeros(X.dims)).data)

    def test_hadamard_dims_differ(self):
        with pytest.raises(ShapeMismatchError):
            hadamard(_cube(), DenseTensor.ones((2, 4)))

    def test_norms(self):
        X = DenseTensor.from_array(np.array([[3.0, 0.0], [0.0, 4.0]]))
        assert frobenius_norm(X) == 5.0
        assert l1_norm(X) == 7.0

    def test_sum_of_exp_zeros(self):
        assert tensor_sum(exp(DenseTensor.zeros((2, 3)))) == 6.0

    def test_square_and_affine(self):
        X = DenseTensor.from_array(np.array([1.0, -2.0, 3.0]))
        assert np.array_equal(square(X).data, [1.0, 4.0, 9.0])
        assert np.array_equal(affine(X, 2.0, 1.0).data, [3.0, -3.0, 7.0])

    def test_check_finite(self):
        with pytest.raises(NonFiniteError):
            check_finite(np.array([1.0, np.nan]))


class TestReconstruction:
    """Test Tucker and Kruskal reconstruction."""

    def test_single_entry_core(self):
        e1 = np.zeros((3, 1))
        e1[0, 0] = 1.0
        T = TuckerFactors.from_arrays(np.full((1, 1, 1), 2.5), [e1, e1, e1])
        full = tucker_to_full(T).array
        assert full[0, 0, 0] == 2.5
        assert np.count_nonzero(full) == 1

    def test_identity_factors(self):
        rng = np.random.default_rng(2)
        G = rng.standard_normal((2, 3, 4))
        T = TuckerFactors.from_arrays(G, [np.eye(2), np.eye(3), np.eye(4)])
        assert np.allclose(tucker_to_full(T).array, G, rtol=0, atol=1e-15)

    def test_matches_iterated_products(self):
        rng = np.random.default_rng(3)
        G = DenseTensor.from_array(rng.standard_normal((2, 2, 2)))
        factors = [DenseMatrix.from_array(rng.standard_normal((d, 2))) for d in (3, 4, 5)]
        expected = G
        for n, A in enumerate(factors):
            expected = n_mode_product(expected, A, n)
        full = tucker_to_full(TuckerFactors(core=G, factors=tuple(factors)))
        assert np.allclose(full.data, expected.data, rtol=1e-13, atol=1e-13)

    def test_factor_core_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            TuckerFactors.from_arrays(np.ones((2, 2)), [np.ones((3, 2)), np.ones((3, 3))])

    def test_rank_one_outer_product(self):
        u, v, w = np.array([1.0, 2.0]), np.array([3.0, 4.0, 5.0]), np.array([6.0, 7.0])
        K = KruskalFactors(
            weights=np.ones(1),
            factors=tuple(DenseMatrix.from_array(a) for a in (u, v, w)),
        )
        assert np.allclose(kruskal_to_full(K).array, np.einsum("i,j,k->ijk", u, v, w))

    def test_kruskal_matches_superdiagonal_tucker(self):
        rng = np.random.default_rng(4)
        weights = rng.standard_normal(3)
        arrays = [rng.standard_normal((d, 3)) for d in (4, 5, 6)]
        factors = tuple(DenseMatrix.from_array(a) for a in arrays)
        K = KruskalFactors(weights=weights, factors=factors)
        T = TuckerFactors(
            core=superdiagonal(weights, 3),
            factors=tuple(DenseMatrix.from_array(a) for a in arrays),
        )
        assert np.allclose(kruskal_to_full(K).data, tucker_to_full(T).data, rtol=1e-12, atol=1e-12)

    def test_zero_weights(self):
        arrays = [np.ones((2, 2)), np.ones((3, 2))]
        factors = tuple(DenseMatrix.from_array(a) for a in arrays)
        K = KruskalFactors(weights=np.zeros(2), factors=factors)
        assert not np.any(kruskal_to_full(K).data)


class TestRanks:
    """Test rank validation and numerical ranks."""

    def test_validate_rank_ok(self):
        assert validate_rank([2, 3], (4, 5)) == (2, 3)

    def test_rank_exceeds_dim(self):
        with pytest.raises(RankError) as exc:
            validate_rank((11, 2, 2), (10, 10, 10))
        assert exc.value.mode == 0
        assert "mode 1" in str(exc.value)

    def test_rank_wrong_length(self):
        with pytest.raises(RankError):
            validate_rank((2, 2), (4, 4, 4))

    def test_zero_rank(self):
        with pytest.raises(RankError):
            validate_rank((0, 2), (4, 4))

    def test_numerical_rank(self):
        rng = np.random.default_rng(5)
        M = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 5))
        assert numerical_rank(M) == 2
        assert numerical_rank(np.zeros((3, 3))) == 0

    def test_matricization_ranks(self):
        rng = np.random.default_rng(6)
        T = TuckerFactors.from_arrays(
            rng.standard_normal((2, 3, 2)),
            [rng.standard_normal((5, 2)), rng.standard_normal((6, 3)), rng.standard_normal((4, 2))],
        )
        assert matricization_ranks(tucker_to_full(T)) == (2, 3, 2)
