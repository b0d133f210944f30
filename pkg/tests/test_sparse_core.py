"""sparse_core: CSR kernels, Matrix Market I/O, norm estimation."""

import numpy as np
import pytest

from al3.errors import DimensionError, MatrixMarketError, RejectedInputError
from al3.sparse_core import (
    DenseMatrix,
    SparseMatrix,
    mm_read,
    mm_write,
    spmv,
    transpose,
    two_norm_est,
)


class TestSparseMatrixConstruction:
    def test_from_dense_prunes_zeros(self):
        a = SparseMatrix.from_dense([[1.0, 0.0], [0.0, 2.0]])
        assert a.nnz == 2

    def test_duplicates_summed(self):
        a = SparseMatrix.from_coo([0, 0], [0, 0], [1.0, 2.0], 1, 1)
        assert a.nnz == 1
        assert a.values[0] == 3.0

    def test_explicit_zero_opt_in(self):
        a = SparseMatrix.from_coo([0], [0], [0.0], 2, 2, keep_explicit_zeros=True)
        assert a.nnz == 1

    def test_invalid_offsets_rejected(self):
        with pytest.raises(RejectedInputError):
            SparseMatrix(2, 2, np.array([0, 2, 1]), np.array([0, 1]), np.array([1.0, 2.0]))

    def test_unsorted_columns_rejected(self):
        with pytest.raises(RejectedInputError):
            SparseMatrix(1, 3, np.array([0, 2]), np.array([2, 1]), np.array([1.0, 2.0]))

    def test_column_out_of_range_rejected(self):
        with pytest.raises(RejectedInputError):
            SparseMatrix(1, 2, np.array([0, 1]), np.array([5]), np.array([1.0]))


class TestSpmv:
    def test_identity(self):
        a = SparseMatrix.identity(3)
        x = np.array([1.0, 2.0, 3.0])
        assert np.array_equal(spmv(a, x), x)

    def test_hand_case(self):
        a = SparseMatrix.from_dense([[2.0, 0.0], [1.0, 3.0]])
        assert np.array_equal(spmv(a, [1.0, 1.0]), [2.0, 4.0])

    def test_zero_vector(self, rng):
        a = SparseMatrix.from_dense(rng.random((4, 6)))
        assert np.array_equal(spmv(a, np.zeros(6)), np.zeros(4))

    def test_dimension_mismatch(self):
        a = SparseMatrix.identity(3)
        with pytest.raises(DimensionError):
            spmv(a, np.ones(4))

    def test_reproduces_columns(self, rng):
        dense = rng.random((5, 4))
        dense[dense < 0.4] = 0.0
        a = SparseMatrix.from_dense(dense)
        for j in range(4):
            e = np.zeros(4)
            e[j] = 1.0
            assert np.array_equal(spmv(a, e), dense[:, j])


class TestTranspose:
    def test_identity(self):
        a = SparseMatrix.identity(4)
        assert transpose(a).equal_to(a)

    def test_single_entry(self):
        a = SparseMatrix.from_dense([[0.0, 1.0], [0.0, 0.0]])
        assert np.array_equal(transpose(a).to_array(), [[0.0, 0.0], [1.0, 0.0]])

    def test_column_extraction_oracle(self):
        rng = np.random.default_rng(5)
        dense = np.zeros((5, 3))
        idx = rng.choice(15, size=7, replace=False)
        dense.flat[idx] = rng.standard_normal(7)
        a = SparseMatrix.from_dense(dense)
        at = transpose(a)
        for i in range(5):
            e = np.zeros(5)
            e[i] = 1.0
            assert np.array_equal(spmv(at, e), dense[i, :])

    def test_involution(self, rng):
        dense = rng.random((6, 9))
        dense[dense < 0.5] = 0.0
        a = SparseMatrix.from_dense(dense)
        assert transpose(transpose(a)).equal_to(a)

    def test_adjoint_identity(self, rng):
        # y^T (A x) == (A^T y)^T x to 1e-13 relative
        for _ in range(10):
            dense = rng.standard_normal((8, 5))
            dense[rng.random((8, 5)) < 0.3] = 0.0
            a = SparseMatrix.from_dense(dense)
            x = rng.standard_normal(5)
            y = rng.standard_normal(8)
            lhs = y @ spmv(a, x)
            rhs = spmv(transpose(a), y) @ x
            assert abs(lhs - rhs) <= 1e-13 * max(abs(lhs), abs(rhs), 1.0)


class TestMatrixMarket:
    def test_one_by_one_roundtrip(self, tmp_path):
        a = SparseMatrix.from_dense([[5.0]])
        path = tmp_path / "one.mtx"
        mm_write(a, path)
        assert mm_read(path).equal_to(a)

    def test_symmetric_expansion(self, tmp_path):
        path = tmp_path / "sym.mtx"
        path.write_text(
            "%%MatrixMarket matrix coordinate real symmetric\n"
            "2 2 3\n"
            "1 1 2.0\n"
            "2 1 1.0\n"
            "2 2 2.0\n"
        )
        a = mm_read(path)
        assert a.nnz == 4
        assert np.array_equal(a.to_array(), [[2.0, 1.0], [1.0, 2.0]])

    def test_random_roundtrip_bit_identical(self, tmp_path, rng):
        dense = rng.standard_normal((100, 100))
        dense[rng.random((100, 100)) < 0.95] = 0.0
        a = SparseMatrix.from_dense(dense)
        path = tmp_path / "big.mtx"
        mm_write(a, path)
        assert mm_read(path).equal_to(a)

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "bad.mtx"
        path.write_text("%%NotMatrixMarket nonsense\n1 1 0\n")
        with pytest.raises(MatrixMarketError) as exc:
            mm_read(path)
        assert exc.value.line == 1

    def test_non_real_field(self, tmp_path):
        path = tmp_path / "cplx.mtx"
        path.write_text("%%MatrixMarket matrix coordinate complex general\n1 1 0\n")
        with pytest.raises(MatrixMarketError) as exc:
            mm_read(path)
        assert exc.value.line == 1

    def test_index_out_of_bounds_reports_line(self, tmp_path):
        path = tmp_path / "oob.mtx"
        path.write_text(
            "%%MatrixMarket matrix coordinate real general\n"
            "% a comment\n"
            "2 2 1\n"
            "3 1 1.0\n"
        )
        with pytest.raises(MatrixMarketError) as exc:
            mm_read(path)
        assert exc.value.line == 4

    def test_truncated_entries(self, tmp_path):
        path = tmp_path / "short.mtx"
        path.write_text("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n")
        with pytest.raises(MatrixMarketError):
            mm_read(path)

    def test_duplicates_summed_on_read(self, tmp_path):
        path = tmp_path / "dup.mtx"
        path.write_text(
            "%%MatrixMarket matrix coordinate real general\n"
            "1 1 2\n"
            "1 1 1.5\n"
            "1 1 2.5\n"
        )
        a = mm_read(path)
        assert a.nnz == 1
        assert a.values[0] == 4.0


class TestTwoNormEst:
    def test_identity(self):
        a = SparseMatrix.identity(7)
        assert abs(two_norm_est(a, 1e-8) - 1.0) <= 1e-6

    def test_diagonal(self):
        a = SparseMatrix.from_diagonal([1.0, 2.0, 5.0])
        assert abs(two_norm_est(a, 1e-10) - 5.0) <= 1e-8

    def test_zero_matrix(self):
        assert two_norm_est(SparseMatrix.zeros(4, 4), 1e-6) == 0.0

    def test_against_dense_svd(self, rng):
        tol = 1e-8
        dense = rng.standard_normal((20, 30))
        a = SparseMatrix.from_dense(dense)
        exact = np.linalg.svd(dense, compute_uv=False)[0]
        est = two_norm_est(a, tol)
        assert abs(est - exact) <= 10 * tol * exact

    def test_tol_must_be_positive(self):
        with pytest.raises(RejectedInputError):
            two_norm_est(SparseMatrix.identity(2), 0.0)


class TestDenseMatrix:
    def test_shape(self):
        d = DenseMatrix(np.ones((2, 3)))
        assert (d.nrows, d.ncols) == (2, 3)

    def test_requires_2d(self):
        with pytest.raises(DimensionError):
            DenseMatrix(np.ones(3))
