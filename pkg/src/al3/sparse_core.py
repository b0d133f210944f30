"""CSR sparse matrices, dense counterparts, and Matrix Market interchange.

Every block of the saddle-point systems handled downstream (factorizations,
Krylov solvers, the block preconditioner) is carried by :class:`SparseMatrix`.
Matrices are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import DimensionError, MatrixMarketError, RejectedInputError

__all__ = [
    "SparseMatrix",
    "DenseMatrix",
    "spmv",
    "transpose",
    "mm_read",
    "mm_write",
    "two_norm_est",
]


def as_vector(x, length: int, what: str = "vector") -> np.ndarray:
    """Coerce to a float64 1-D array of the given length or raise."""
    v = np.ascontiguousarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"{what} must be 1-D, got ndim={v.ndim}")
    if v.shape[0] != length:
        raise DimensionError(f"{what} has length {v.shape[0]}, expected {length}")
    return v


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Compressed sparse row matrix with canonical structure.

    Invariants enforced at construction: row_offsets is nondecreasing with
    row_offsets[0] = 0 and row_offsets[nrows] = nnz; column indices are
    strictly increasing within each row and all < ncols.  The ``from_*``
    constructors additionally sum duplicates and prune explicit zeros
    (pass ``keep_explicit_zeros=True`` to opt back in).
    """

    nrows: int
    ncols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        offs = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        cols = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "row_offsets", offs)
        object.__setattr__(self, "col_indices", cols)
        object.__setattr__(self, "values", vals)
        if self.nrows < 0 or self.ncols < 0:
            raise RejectedInputError("matrix dimensions must be nonnegative")
        if offs.shape != (self.nrows + 1,):
            raise RejectedInputError(
                f"row_offsets has shape {offs.shape}, expected ({self.nrows + 1},)"
            )
        if offs[0] != 0 or offs[-1] != len(vals) or len(cols) != len(vals):
            raise RejectedInputError("row_offsets inconsistent with value arrays")
        if np.any(np.diff(offs) < 0):
            raise RejectedInputError("row_offsets must be nondecreasing")
        if len(cols) and (cols.min() < 0 or cols.max() >= self.ncols):
            raise RejectedInputError("column index out of range")
        if len(cols) > 1:
            # strictly increasing inside each row: any nonpositive jump must
            # land exactly on a row boundary
            jumps = np.flatnonzero(np.diff(cols) <= 0) + 1
            if len(jumps) and not np.all(np.isin(jumps, offs)):
                raise RejectedInputError("column indices not strictly increasing within a row")

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_scipy(cls, mat, keep_explicit_zeros: bool = False) -> "SparseMatrix":
        csr = sp.csr_matrix(mat).copy()
        csr.sum_duplicates()
        csr.sort_indices()
        if not keep_explicit_zeros:
            csr.eliminate_zeros()
        return cls(csr.shape[0], csr.shape[1], csr.indptr, csr.indices, csr.data)

    @classmethod
    def from_coo(cls, rows, cols, values, nrows: int, ncols: int,
                 keep_explicit_zeros: bool = False) -> "SparseMatrix":
        """Build from triplets; duplicate entries are summed."""
        coo = sp.coo_matrix(
            (np.asarray(values, dtype=np.float64), (rows, cols)), shape=(nrows, ncols)
        )
        return cls.from_scipy(coo, keep_explicit_zeros)

    @classmethod
    def from_dense(cls, arr, keep_explicit_zeros: bool = False) -> "SparseMatrix":
        a = np.asarray(arr, dtype=np.float64)
        if a.ndim != 2:
            raise DimensionError("from_dense expects a 2-D array")
        return cls.from_scipy(sp.csr_matrix(a), keep_explicit_zeros)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls.from_scipy(sp.identity(n, format="csr"))

    @classmethod
    def from_diagonal(cls, diag) -> "SparseMatrix":
        d = np.asarray(diag, dtype=np.float64)
        return cls.from_scipy(sp.diags(d, format="csr"))

    @classmethod
    def zeros(cls, nrows: int, ncols: int) -> "SparseMatrix":
        return cls(nrows, ncols, np.zeros(nrows + 1, dtype=np.int64),
                   np.zeros(0, dtype=np.int64), np.zeros(0))

    # -- views and basic queries -------------------------------------------

    @cached_property
    def _scipy(self) -> sp.csr_matrix:
        # shared read-only view; never mutate
        return sp.csr_matrix(
            (self.values, self.col_indices, self.row_offsets),
            shape=(self.nrows, self.ncols),
        )

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nrows, self.ncols)

    @property
    def nnz(self) -> int:
        return len(self.values)

    def to_scipy(self) -> sp.csr_matrix:
        return self._scipy.copy()

    def to_dense(self) -> "DenseMatrix":
        return DenseMatrix(self._scipy.toarray())

    def to_array(self) -> np.ndarray:
        return self._scipy.toarray()

    def diagonal(self) -> np.ndarray:
        return self._scipy.diagonal()

    def equal_to(self, other: "SparseMatrix") -> bool:
        """Exact structural and bitwise value equality."""
        return (
            self.shape == other.shape
            and np.array_equal(self.row_offsets, other.row_offsets)
            and np.array_equal(self.col_indices, other.col_indices)
            and np.array_equal(self.values, other.values)
        )

    def symmetry_residual(self) -> float:
        """Relative Frobenius asymmetry ||A - A^T||_F / ||A||_F (0 for empty A)."""
        nrm = float(sp.linalg.norm(self._scipy)) if self.nnz else 0.0
        if nrm == 0.0:
            return 0.0
        return float(sp.linalg.norm(self._scipy - self._scipy.T)) / nrm

    def scaled(self, factor: float) -> "SparseMatrix":
        return SparseMatrix(self.nrows, self.ncols, self.row_offsets,
                            self.col_indices, self.values * float(factor))


@dataclass(frozen=True, eq=False)
class DenseMatrix:
    """Row-major dense matrix used by oracles and desk-scale spectral work."""

    values: np.ndarray

    def __post_init__(self):
        a = np.ascontiguousarray(self.values, dtype=np.float64)
        if a.ndim != 2:
            raise DimensionError("DenseMatrix expects a 2-D value array")
        object.__setattr__(self, "values", a)

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    @property
    def array(self) -> np.ndarray:
        return self.values

    @classmethod
    def identity(cls, n: int) -> "DenseMatrix":
        return cls(np.eye(n))


def spmv(a: SparseMatrix, x) -> np.ndarray:
    """Matrix-vector product A @ x."""
    v = as_vector(x, a.ncols, "spmv input")
    return a._scipy @ v


def transpose(a: SparseMatrix) -> SparseMatrix:
    """Transpose, preserving stored entries (including explicit zeros)."""
    t = a._scipy.T.tocsr()
    t.sort_indices()
    return SparseMatrix(t.shape[0], t.shape[1], t.indptr, t.indices, t.data)


# -- Matrix Market I/O -------------------------------------------------------

_MM_BANNER = "%%MatrixMarket"


def mm_write(a: SparseMatrix, path) -> None:
    """Write in coordinate real general format, 1-based, 17 significant digits."""
    coo = a._scipy.tocoo()
    with open(path, "w", encoding="ascii") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{a.nrows} {a.ncols} {a.nnz}\n")
        fh.writelines(
            f"{i + 1} {j + 1} {v:.16e}\n"
            for i, j, v in zip(coo.row, coo.col, coo.data)
        )


def mm_read(path) -> SparseMatrix:
    """Read a coordinate real general|symmetric Matrix Market file.

    Symmetric files (lower triangle stored) are expanded to full storage.
    Duplicate entries are summed.  Malformed input raises
    :class:`MatrixMarketError` carrying the offending line number.
    """
    with open(path, "r", encoding="ascii", errors="replace") as fh:
        lines = fh.readlines()
    if not lines:
        raise MatrixMarketError("empty file", line=1)

    header = lines[0].split()
    if len(header) != 5 or header[0] != _MM_BANNER:
        raise MatrixMarketError("malformed MatrixMarket banner", line=1)
    _, obj, fmt, field, symmetry = (tok.lower() for tok in header)
    if obj != "matrix" or fmt != "coordinate":
        raise MatrixMarketError(f"unsupported header '{obj} {fmt}'", line=1)
    if field != "real":
        raise MatrixMarketError(f"field must be 'real', got '{field}'", line=1)
    if symmetry not in ("general", "symmetric"):
        raise MatrixMarketError(f"unsupported symmetry '{symmetry}'", line=1)

    # locate the size line, skipping comments and blanks
    lineno = 1
    size_line = None
    for lineno, raw in enumerate(lines[1:], start=2):
        stripped = raw.strip()
        if not stripped or stripped.startswith("%"):
            continue
        size_line = stripped
        break
    if size_line is None:
        raise MatrixMarketError("missing size line", line=len(lines))
    parts = size_line.split()
    if len(parts) != 3:
        raise MatrixMarketError("size line must hold 'nrows ncols nnz'", line=lineno)
    try:
        nrows, ncols, nnz = (int(p) for p in parts)
    except ValueError:
        raise MatrixMarketError("size line entries must be integers", line=lineno) from None
    if nrows < 0 or ncols < 0 or nnz < 0:
        raise MatrixMarketError("size line entries must be nonnegative", line=lineno)

    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.float64)
    count = 0
    for entry_lineno, raw in enumerate(lines[lineno:], start=lineno + 1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("%"):
            continue
        if count >= nnz:
            raise MatrixMarketError(
                f"more than the declared {nnz} entries", line=entry_lineno
            )
        parts = stripped.split()
        if len(parts) != 3:
            raise MatrixMarketError("entry must hold 'row col value'", line=entry_lineno)
        try:
            i = int(parts[0])
            j = int(parts[1])
            v = float(parts[2])
        except ValueError:
            raise MatrixMarketError(
                f"cannot parse entry '{stripped}'", line=entry_lineno
            ) from None
        if not (1 <= i <= nrows) or not (1 <= j <= ncols):
            raise MatrixMarketError(
                f"index ({i}, {j}) outside declared {nrows} x {ncols}", line=entry_lineno
            )
        if symmetry == "symmetric" and i < j:
            raise MatrixMarketError(
                "symmetric file must store the lower triangle only", line=entry_lineno
            )
        rows[count] = i - 1
        cols[count] = j - 1
        vals[count] = v
        count += 1
    if count != nnz:
        raise MatrixMarketError(
            f"declared {nnz} entries but found {count}", line=len(lines)
        )

    if symmetry == "symmetric":
        off = rows != cols
        rows, cols, vals = (
            np.concatenate([rows, cols[off]]),
            np.concatenate([cols, rows[off]]),
            np.concatenate([vals, vals[off]]),
        )
    return SparseMatrix.from_coo(rows, cols, vals, nrows, ncols)


# -- two-norm estimation -----------------------------------------------------

def two_norm_est(a: SparseMatrix, tol: float, maxit: int = 5000) -> float:
    """Estimate ||A||_2 by power iteration on A^T A.

    Stops once the relative change between successive singular-value
    estimates is below ``tol`` and the Aitken-extrapolated remaining change
    (change * rho / (1 - rho) for the observed contraction rho) is too.  This
    is a statistical estimate: it can undershoot the true norm when the
    leading singular values are (nearly) degenerate.
    """
    if tol <= 0:
        raise RejectedInputError("tol must be positive")
    if a.nnz == 0 or not np.any(a.values):
        return 0.0
    csr = a._scipy
    rng = np.random.Generator(np.random.Philox(key=np.array([0x2A0, 7], dtype=np.uint64)))
    v = rng.standard_normal(a.ncols)
    for _ in range(4):
        nv = np.linalg.norm(v)
        if nv > 0:
            break
        v = rng.standard_normal(a.ncols)
    v /= np.linalg.norm(v)
    sigma = 0.0
    prev_change = np.inf
    for _ in range(maxit):
        w = csr @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # v landed in the null space; redraw
            v = rng.standard_normal(a.ncols)
            v /= np.linalg.norm(v)
            continue
        z = csr.T @ w
        nz = np.linalg.norm(z)
        sigma_new = nz / nw
        v = z / nz
        change = abs(sigma_new - sigma)
        if sigma > 0 and change <= tol * sigma_new:
            rho = min(change / prev_change, 0.999) if prev_change > 0 else 0.0
            if change * rho / (1.0 - rho) <= tol * sigma_new:
                return sigma_new
        prev_change = change
        sigma = sigma_new
    return sigma
