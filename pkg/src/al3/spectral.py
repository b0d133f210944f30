"""Desk-scale spectral verification of the preconditioner theory.

Assembles P_{gamma,alpha}^{-1} A_bar densely, computes its full spectrum,
evaluates the eigenvalue bounds (real, positive, lower/upper), the quadratic
root formulas behind them, the Ker(B) eigenvalue formula, and clustering
diagnostics.  Everything here is an oracle: dense, exact, and deliberately
independent of the sparse solver pipeline it checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .block_al import (
    DESK_CAP,
    BlockSystem,
    ExactPrecondSolver,
    PrecondParams,
    dense_augmented,
    resolve_q,
)
from .errors import DeskScaleError, InvalidSampleError, RejectedInputError
from .sparse_core import DenseMatrix, SparseMatrix, spmv, two_norm_est

__all__ = [
    "BoundReport",
    "QuadSample",
    "SpectrumReport",
    "dense_precond_matrix",
    "eigenvalues_dense",
    "compute_spectrum",
    "theorem_bounds",
    "quad_roots",
    "kerb_eigs",
    "cluster_stats",
    "sample_from_vector",
    "branch_counts",
]


@dataclass(frozen=True)
class BoundReport:
    """Ingredients and values of the two-sided eigenvalue bound."""

    xi: float
    lam_min_q: float
    lam_max_q: float
    lam_max_a22: float
    lam_min_a22: float
    lam_max_schur: float
    norm_b: float
    lower: float
    upper: float

    def __post_init__(self):
        if not (0.0 < self.lower < self.upper):
            raise RejectedInputError(
                f"bounds must satisfy 0 < lower < upper, got [{self.lower}, {self.upper}]"
            )


@dataclass(frozen=True)
class QuadSample:
    """One (p, q, t) sample with its quadratic coefficients and roots."""

    p_val: float
    q_val: float
    t_val: float
    b_coef: float
    c_coef: float
    root1: float
    root2: float

    def __post_init__(self):
        if self.b_coef < 1.0 + self.c_coef - 1e-12:
            raise InvalidSampleError("coefficient identity b >= 1 + c violated")
        if self.root1 > self.root2 + 1e-12:
            raise InvalidSampleError("roots out of order")
        if abs(self.root1 + self.root2 - self.b_coef) > 1e-10 * max(1.0, abs(self.b_coef)):
            raise InvalidSampleError("root sum does not match b")
        if abs(self.root1 * self.root2 - self.c_coef) > 1e-10 * max(1.0, abs(self.c_coef)):
            raise InvalidSampleError("root product does not match c")


@dataclass(frozen=True)
class SpectrumReport:
    """Full spectrum of the preconditioned matrix, sorted by real part."""

    eigenvalues: np.ndarray
    max_imag: float

    def cluster_fraction(self, delta: float) -> float:
        if self.eigenvalues.size == 0:
            return 0.0
        return float(np.mean(np.abs(self.eigenvalues - 1.0) <= delta))


def dense_precond_matrix(sys: BlockSystem, params: PrecondParams,
                         cap: int = DESK_CAP) -> DenseMatrix:
    """Assemble P^{-1} A_bar column by column through the exact applier."""
    if sys.total > cap:
        raise DeskScaleError(f"system size {sys.total} exceeds cap {cap}")
    abar = dense_augmented(sys, params, cap)
    solver = ExactPrecondSolver(sys, params, cap)
    out = np.empty((sys.total, sys.total))
    for j in range(sys.total):
        out[:, j] = solver.apply(abar[:, j])
    return DenseMatrix(out)


def eigenvalues_dense(mat: DenseMatrix) -> np.ndarray:
    """All eigenvalues via the LAPACK real-Schur path, sorted by real part."""
    a = mat.array
    if a.shape[0] != a.shape[1]:
        raise RejectedInputError("eigenvalues_dense expects a square matrix")
    lam = np.linalg.eigvals(a)
    order = np.lexsort((lam.imag, lam.real))
    return lam[order]


def compute_spectrum(sys: BlockSystem, params: PrecondParams,
                     cap: int = DESK_CAP) -> SpectrumReport:
    lam = eigenvalues_dense(dense_precond_matrix(sys, params, cap))
    max_imag = float(np.abs(lam.imag).max()) if lam.size else 0.0
    return SpectrumReport(lam, max_imag)


def _dense_schur(sys: BlockSystem) -> np.ndarray:
    a11 = sys.a11.to_array()
    a12 = sys.a12.to_array()
    return a12.T @ np.linalg.solve(a11, a12)


def theorem_bounds(sys: BlockSystem, params: PrecondParams,
                   cap: int = DESK_CAP) -> BoundReport:
    """Evaluate the two-sided eigenvalue bound of the preconditioned matrix.

    xi is the smallest nonzero singular value of B (the row-space reading of
    the bound's minimum; with a nontrivial Ker(B) the set infimum would be 0).
    """
    if sys.total > cap:
        raise DeskScaleError(f"system size {sys.total} exceeds cap {cap}")
    if sys.p == 0:
        raise RejectedInputError("theorem_bounds needs a nonempty constraint block")
    q = resolve_q(sys, params)
    lam_min_q, lam_max_q = q.eig_bounds()
    w22 = sla.eigvalsh(sys.a22.to_array())
    lam_min_a22, lam_max_a22 = float(w22[0]), float(w22[-1])
    schur = _dense_schur(sys)
    lam_max_schur = float(sla.eigvalsh(schur)[-1]) if sys.a12.nnz else 0.0
    lam_max_schur = max(lam_max_schur, 0.0)
    norm_b = two_norm_est(sys.b, 1e-10)
    svals = sla.svdvals(sys.b.to_array())
    nz = svals > max(sys.b.shape) * np.finfo(float).eps * svals[0]
    xi = float(svals[nz][-1])
    alpha = params.alpha
    lower = (xi ** 2 * alpha * lam_min_q) / (
        lam_max_q * ((lam_max_a22 + lam_max_schur) * lam_min_q
                     + 2.0 * alpha * norm_b ** 2)
    )
    upper = 2.0 + lam_max_schur / lam_min_a22
    return BoundReport(xi, lam_min_q, lam_max_q, lam_max_a22, lam_min_a22,
                       lam_max_schur, norm_b, lower, upper)


def quad_roots(p_val: float, q_val: float, t_val: float,
               gamma: float, alpha: float) -> QuadSample:
    """Coefficients and roots of lambda^2 - b lambda + c = 0.

    b = 1 + (p + t) / (q + (1 - gamma/alpha) t) and
    c = t / (q + (1 - gamma/alpha) t); the small root is computed as
    2c / (b + sqrt(b^2 - 4c)) to dodge cancellation.
    """
    if q_val <= 0:
        raise InvalidSampleError("q must be positive")
    if t_val < 0:
        raise InvalidSampleError("t must be nonnegative")
    if p_val < 0:
        raise InvalidSampleError("p must be nonnegative")
    if not (0 < gamma <= alpha):
        raise InvalidSampleError("need alpha >= gamma > 0")
    denom = q_val + (1.0 - gamma / alpha) * t_val
    if denom <= 0:
        raise InvalidSampleError("q + (1 - gamma/alpha) t must be positive")
    b = 1.0 + (p_val + t_val) / denom
    c = t_val / denom
    disc = b * b - 4.0 * c
    if disc < 0:
        # b >= 1 + c makes this impossible; numerical dust only
        disc = 0.0
    root = np.sqrt(disc)
    lam2 = 0.5 * (b + root)
    lam1 = 2.0 * c / (b + root) if (b + root) > 0 else 0.0
    return QuadSample(p_val, q_val, t_val, b, c, lam1, lam2)


def kerb_eigs(sys: BlockSystem, params: PrecondParams, y) -> float:
    """Eigenvalue 1 + (y^T A12^T A11^{-1} A12 y) / (y^T A22 y) for y in Ker(B).

    Independent of gamma and alpha; params is accepted for interface symmetry
    and ignored by the formula.
    """
    yv = np.asarray(y, dtype=np.float64)
    if yv.shape != (sys.m,):
        raise RejectedInputError(f"y must have length {sys.m}")
    ny = np.linalg.norm(yv)
    if ny == 0:
        raise RejectedInputError("y must be nonzero")
    if sys.p and np.linalg.norm(spmv(sys.b, yv)) > 1e-10 * ny:
        raise RejectedInputError("y is not in Ker(B) to 1e-10 relative")
    a12y = spmv(sys.a12, yv) if sys.a12.nnz else np.zeros(sys.n)
    num = float(a12y @ np.linalg.solve(sys.a11.to_array(), a12y)) if sys.a12.nnz else 0.0
    den = float(yv @ spmv(sys.a22, yv))
    return 1.0 + num / den


def cluster_stats(report: SpectrumReport, deltas: Sequence[float]) -> list[tuple[float, float]]:
    """(delta, fraction of eigenvalues with |lambda - 1| <= delta) rows."""
    return [(float(d), report.cluster_fraction(float(d))) for d in deltas]


def sample_from_vector(sys: BlockSystem, params: PrecondParams, y) -> QuadSample:
    """Extract (p, q, t) from a middle-block vector and build its QuadSample.

    p = y^T A12^T A11^{-1} A12 y, q = y^T (A22 + gamma B^T Q^{-1} B) y,
    t = alpha y^T B^T Q^{-1} B y, matching the eigenvalue derivation.
    Desk scale (dense A11 solve).
    """
    yv = np.asarray(y, dtype=np.float64)
    if yv.shape != (sys.m,):
        raise RejectedInputError(f"y must have length {sys.m}")
    q_op = resolve_q(sys, params)
    a12y = spmv(sys.a12, yv) if sys.a12.nnz else np.zeros(sys.n)
    p_val = float(a12y @ np.linalg.solve(sys.a11.to_array(), a12y)) if sys.a12.nnz else 0.0
    by = spmv(sys.b, yv)
    s_val = float(by @ q_op.solve(by)) if sys.p else 0.0
    q_val = float(yv @ spmv(sys.a22, yv)) + params.gamma * s_val
    t_val = params.alpha * s_val
    return quad_roots(max(p_val, 0.0), q_val, t_val, params.gamma, params.alpha)


def branch_counts(sys: BlockSystem, params: PrecondParams, cap: int = DESK_CAP,
                  tol: float = 1e-6) -> dict:
    """Match each eigenvalue to its analytic branch by nearest value.

    Branches: 'one' (lambda = 1), 'kernel' (the Ker(B) formula evaluated on
    the eigenvector), 'quadratic' (a root of the sample built from the
    eigenvector).  Mismatches land in 'unmatched' and are reported, never
    asserted.
    """
    if sys.total > cap:
        raise DeskScaleError(f"system size {sys.total} exceeds cap {cap}")
    mat = dense_precond_matrix(sys, params, cap).array
    lam, vecs = np.linalg.eig(mat)
    counts = {"one": 0, "kernel": 0, "quadratic": 0, "unmatched": 0}
    n, m = sys.n, sys.m
    for k in range(lam.size):
        lk = lam[k]
        if abs(lk - 1.0) <= tol * max(1.0, abs(lk)):
            counts["one"] += 1
            continue
        y = np.real(vecs[n:n + m, k])
        ny = np.linalg.norm(y)
        if ny <= 1e-12:
            counts["unmatched"] += 1
            continue
        y = y / ny
        matched = False
        if sys.p == 0 or np.linalg.norm(spmv(sys.b, y)) <= 1e-8:
            try:
                val = kerb_eigs(sys, params, y)
                matched = abs(lk - val) <= tol * max(1.0, abs(lk))
                if matched:
                    counts["kernel"] += 1
            except RejectedInputError:
                matched = False
        if not matched:
            try:
                sample = sample_from_vector(sys, params, y)
                if min(abs(lk - sample.root1), abs(lk - sample.root2)) <= tol * max(1.0, abs(lk)):
                    counts["quadratic"] += 1
                    matched = True
            except InvalidSampleError:
                matched = False
        if not matched:
            counts["unmatched"] += 1
    return counts
