"""Incomplete and exact Cholesky factorizations and triangular solves.

The threshold incomplete Cholesky here mirrors MATLAB's ichol(., 'ict'):
left-looking, column oriented, and an off-diagonal candidate l_ij survives
only if |l_ij| > droptol * ||A(:,j)||_2.  droptol = 0 keeps every candidate
and therefore reproduces the complete factor up to fill.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from numba import njit
from scipy.sparse import csgraph

from .errors import (
    FactorBreakdownError,
    FactorizationError,
    RejectedInputError,
    SingularFactorError,
)
from .sparse_core import DenseMatrix, SparseMatrix, as_vector, transpose

__all__ = [
    "LowerTriangularFactor",
    "ic_threshold",
    "ic_threshold_shifted",
    "tri_solve",
    "dense_cholesky",
    "dense_lu_solve",
]

_SYM_TOL = 1e-12


@njit(cache=True)
def _ict_kernel(n, a_indptr, a_indices, a_values, droptol, colnorms):
    """Left-looking column ICT.  Returns (status, bad_row, colptr, rows, vals).

    status 0 = ok, 1 = nonpositive pivot at bad_row.  Column storage (CSC of
    L) with rows ascending inside each column, diagonal first.
    """
    cap = max(a_indptr[n] * 2, 16 * n, 64)
    l_rows = np.empty(cap, dtype=np.int64)
    l_vals = np.empty(cap, dtype=np.float64)
    l_colptr = np.zeros(n + 1, dtype=np.int64)

    head = np.full(n, -1, dtype=np.int64)      # head[r]: first column whose next row is r
    next_col = np.full(n, -1, dtype=np.int64)  # chain link
    cur_ptr = np.zeros(n, dtype=np.int64)      # position of L[r, k] in column k's storage

    w = np.zeros(n, dtype=np.float64)
    touched = np.zeros(n, dtype=np.bool_)
    idxbuf = np.empty(n, dtype=np.int64)
    keep_rows = np.empty(n, dtype=np.int64)
    keep_vals = np.empty(n, dtype=np.float64)

    nz = 0
    for j in range(n):
        nt = 0
        # scatter the lower part of column j of A (row j of CSR, cols >= j)
        for q in range(a_indptr[j], a_indptr[j + 1]):
            i = a_indices[q]
            if i >= j:
                w[i] = a_values[q]
                touched[i] = True
                idxbuf[nt] = i
                nt += 1
        # apply updates from all earlier columns k with l_jk != 0
        k = head[j]
        head[j] = -1
        while k != -1:
            nk = next_col[k]
            pk = cur_ptr[k]
            ljk = l_vals[pk]
            for q in range(pk, l_colptr[k + 1]):
                i = l_rows[q]
                if touched[i]:
                    w[i] -= ljk * l_vals[q]
                else:
                    touched[i] = True
                    idxbuf[nt] = i
                    nt += 1
                    w[i] = -ljk * l_vals[q]
            pk += 1
            cur_ptr[k] = pk
            if pk < l_colptr[k + 1]:
                r = l_rows[pk]
                next_col[k] = head[r]
                head[r] = k
            k = nk

        d = w[j] if touched[j] else 0.0
        if d <= 0.0:
            return 1, j, l_colptr[: j + 1], l_rows[:nz], l_vals[:nz]
        ljj = np.sqrt(d)

        # gather and drop off-diagonal candidates
        nkeep = 0
        thresh = droptol * colnorms[j]
        for t in range(nt):
            i = idxbuf[t]
            if i > j:
                val = w[i] / ljj
                if abs(val) > thresh:
                    keep_rows[nkeep] = i
                    keep_vals[nkeep] = val
                    nkeep += 1
            w[i] = 0.0
            touched[i] = False

        order = np.argsort(keep_rows[:nkeep])
        needed = nz + nkeep + 1
        if needed > cap:
            new_cap = max(cap * 2, needed)
            nr = np.empty(new_cap, dtype=np.int64)
            nv = np.empty(new_cap, dtype=np.float64)
            nr[:nz] = l_rows[:nz]
            nv[:nz] = l_vals[:nz]
            l_rows = nr
            l_vals = nv
            cap = new_cap
        l_rows[nz] = j
        l_vals[nz] = ljj
        nz += 1
        for t in range(nkeep):
            l_rows[nz] = keep_rows[order[t]]
            l_vals[nz] = keep_vals[order[t]]
            nz += 1
        l_colptr[j + 1] = nz
        if nkeep > 0:
            first = l_colptr[j] + 1
            cur_ptr[j] = first
            r = l_rows[first]
            next_col[j] = head[r]
            head[r] = j

    return 0, -1, l_colptr, l_rows[:nz], l_vals[:nz]


@njit(cache=True)
def _csr_lower_solve(indptr, indices, vals, b):
    """Forward substitution; diagonal is the last entry of each row."""
    n = b.shape[0]
    x = b.copy()
    for i in range(n):
        end = indptr[i + 1] - 1
        s = x[i]
        for q in range(indptr[i], end):
            s -= vals[q] * x[indices[q]]
        d = vals[end]
        if d == 0.0:
            return x, i
        x[i] = s / d
    return x, -1


@njit(cache=True)
def _csr_upper_solve(indptr, indices, vals, b):
    """Back substitution on CSR of an upper factor; diagonal first per row."""
    n = b.shape[0]
    x = b.copy()
    for i in range(n - 1, -1, -1):
        start = indptr[i]
        s = x[i]
        for q in range(start + 1, indptr[i + 1]):
            s -= vals[q] * x[indices[q]]
        d = vals[start]
        if d == 0.0:
            return x, i
        x[i] = s / d
    return x, -1


@dataclass(frozen=True, eq=False)
class LowerTriangularFactor:
    """Sparse lower-triangular Cholesky factor, optionally of a permuted matrix.

    ``perm`` (when present) records the fill-reducing ordering: the factor
    satisfies L L^T ~= A[perm][:, perm] and :meth:`solve` undoes it.
    """

    L: SparseMatrix
    perm: np.ndarray | None = None

    def __post_init__(self):
        L = self.L
        if L.nrows != L.ncols:
            raise RejectedInputError("factor must be square")
        counts = np.diff(L.row_offsets)
        if np.any(counts == 0):
            raise RejectedInputError("every factor row needs a diagonal entry")
        # columns ascend within rows, so the last entry per row must be the diagonal
        last_cols = L.col_indices[L.row_offsets[1:] - 1]
        if not np.array_equal(last_cols, np.arange(L.nrows)):
            raise RejectedInputError("factor is not lower triangular with full diagonal")
        diag = L.values[L.row_offsets[1:] - 1]
        if np.any(diag <= 0.0):
            raise RejectedInputError("factor diagonal must be positive")

    @property
    def n(self) -> int:
        return self.L.nrows

    @cached_property
    def _upper(self) -> SparseMatrix:
        return transpose(self.L)

    def solve(self, r) -> np.ndarray:
        """Apply (L L^T)^{-1}, honoring the stored permutation if any."""
        v = as_vector(r, self.n, "rhs")
        if self.perm is not None:
            v = v[self.perm]
        y = tri_solve(self, v, "lower")
        z = tri_solve(self, y, "upper")
        if self.perm is not None:
            out = np.empty_like(z)
            out[self.perm] = z
            return out
        return z

    def nnz(self) -> int:
        return self.L.nnz


def _check_ic_input(a: SparseMatrix, droptol: float) -> np.ndarray:
    if a.nrows != a.ncols:
        raise RejectedInputError("ic_threshold expects a square matrix")
    if droptol < 0:
        raise RejectedInputError("droptol must be nonnegative")
    if a.symmetry_residual() > _SYM_TOL:
        raise RejectedInputError("matrix is not symmetric to 1e-12 relative")
    diag = a.diagonal()
    if a.nrows and np.any(diag <= 0):
        raise RejectedInputError("matrix must have a positive diagonal")
    # column 2-norms of A (columns == rows by symmetry)
    sq = a._scipy.multiply(a._scipy)
    return np.sqrt(np.asarray(sq.sum(axis=0)).ravel())


def ic_threshold(a: SparseMatrix, droptol: float,
                 use_rcm: bool = False) -> LowerTriangularFactor:
    """Threshold incomplete Cholesky L L^T ~= A.

    Raises :class:`FactorBreakdownError` identifying the row on a nonpositive
    pivot; the shift remedy lives in :func:`ic_threshold_shifted`.  The
    optional reverse-Cuthill-McKee pass is off by default.
    """
    colnorms = _check_ic_input(a, droptol)
    perm = None
    work = a
    if use_rcm and a.nrows:
        perm = np.asarray(
            csgraph.reverse_cuthill_mckee(a._scipy, symmetric_mode=True),
            dtype=np.int64,
        )
        work = SparseMatrix.from_scipy(a._scipy[perm][:, perm])
        colnorms = colnorms[perm]
    status, bad_row, colptr, rows, vals = _ict_kernel(
        work.nrows, work.row_offsets, work.col_indices, work.values,
        float(droptol), colnorms,
    )
    if status != 0:
        raise FactorBreakdownError(int(bad_row))
    csc = sp.csc_matrix((vals, rows, colptr), shape=(a.nrows, a.nrows))
    L = SparseMatrix.from_scipy(csc.tocsr(), keep_explicit_zeros=True)
    return LowerTriangularFactor(L, perm)


def ic_threshold_shifted(a: SparseMatrix, droptol: float, use_rcm: bool = False,
                         sigma0: float = 1e-3, max_retries: int = 10
                         ) -> LowerTriangularFactor:
    """ic_threshold with the standard diagonal-shift breakdown remedy.

    On a nonpositive pivot the whole factorization is retried on
    A + sigma * diag(A), sigma doubling from ``sigma0``, at most
    ``max_retries`` times.
    """
    try:
        return ic_threshold(a, droptol, use_rcm)
    except FactorBreakdownError:
        pass
    diag = a.diagonal()
    sigma = sigma0
    last: FactorBreakdownError | None = None
    for _ in range(max_retries):
        shifted = SparseMatrix.from_scipy(a._scipy + sp.diags(sigma * diag))
        try:
            return ic_threshold(shifted, droptol, use_rcm)
        except FactorBreakdownError as exc:
            last = exc
            sigma *= 2.0
    raise FactorBreakdownError(
        last.row if last else -1,
        f"incomplete Cholesky failed after {max_retries} diagonal shifts",
    )


def tri_solve(factor: LowerTriangularFactor, r, mode: str) -> np.ndarray:
    """Solve L y = r (mode='lower') or L^T y = r (mode='upper')."""
    v = as_vector(r, factor.n, "rhs")
    if mode == "lower":
        L = factor.L
        x, bad = _csr_lower_solve(L.row_offsets, L.col_indices, L.values, v)
    elif mode == "upper":
        U = factor._upper
        x, bad = _csr_upper_solve(U.row_offsets, U.col_indices, U.values, v)
    else:
        raise RejectedInputError(f"mode must be 'lower' or 'upper', got {mode!r}")
    if bad >= 0:
        raise SingularFactorError(f"zero diagonal at row {bad}")
    return x


# -- dense oracles ------------------------------------------------------------

def dense_cholesky(a: DenseMatrix) -> DenseMatrix:
    """Lower Cholesky factor of a dense SPD matrix."""
    m = a.array
    if m.shape[0] != m.shape[1]:
        raise RejectedInputError("dense_cholesky expects a square matrix")
    nrm = np.linalg.norm(m)
    if nrm > 0 and np.linalg.norm(m - m.T) > 1e-10 * nrm:
        raise RejectedInputError("dense_cholesky expects a symmetric matrix")
    try:
        return DenseMatrix(sla.cholesky(m, lower=True))
    except sla.LinAlgError as exc:
        raise FactorizationError(f"matrix is not positive definite: {exc}") from exc


def dense_lu_solve(a: DenseMatrix, b) -> np.ndarray:
    """Solve A x = b by dense LU with partial pivoting."""
    m = a.array
    if m.shape[0] != m.shape[1]:
        raise RejectedInputError("dense_lu_solve expects a square matrix")
    v = as_vector(b, m.shape[0], "rhs")
    try:
        lu, piv = sla.lu_factor(m)
    except sla.LinAlgError as exc:
        raise FactorizationError(str(exc)) from exc
    udiag = np.diag(lu)
    if not np.all(np.isfinite(lu)) or np.any(udiag == 0.0):
        raise FactorizationError("matrix is singular to working precision")
    return sla.lu_solve((lu, piv), v)
