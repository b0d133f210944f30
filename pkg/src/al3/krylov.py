"""Iterative solvers: PCG, right-preconditioned GMRES, and flexible GMRES.

All solvers start from the zero vector and stop when the residual 2-norm
drops below tol_rel * ||b|| or when maxit is reached.  No restarts: the
Krylov basis grows until convergence or maxit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg as sla

from .errors import DimensionError, RejectedInputError
from .sparse_core import SparseMatrix, as_vector

__all__ = ["LinearOperator", "IterStats", "pcg", "gmres_right", "fgmres"]

STOP_TOLERANCE = "tolerance"
STOP_MAXIT = "max_iterations"
STOP_BREAKDOWN = "breakdown"


@dataclass(frozen=True)
class LinearOperator:
    """A square linear map given by its dimension and an apply callable."""

    dim: int
    apply: Callable[[np.ndarray], np.ndarray]

    @classmethod
    def from_sparse(cls, a: SparseMatrix) -> "LinearOperator":
        if a.nrows != a.ncols:
            raise DimensionError("operator must be square")
        csr = a._scipy
        return cls(a.nrows, lambda v: csr @ v)

    @classmethod
    def from_dense(cls, arr) -> "LinearOperator":
        m = np.asarray(arr, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError("operator must be square")
        return cls(m.shape[0], lambda v: m @ v)

    @classmethod
    def identity(cls, n: int) -> "LinearOperator":
        return cls(n, lambda v: v.copy())


OperatorLike = Union[LinearOperator, Callable[[np.ndarray], np.ndarray], None]


def _as_apply(op: OperatorLike, dim: int, what: str):
    if op is None:
        return lambda v: v.copy()
    if isinstance(op, LinearOperator):
        if op.dim != dim:
            raise DimensionError(f"{what} has dim {op.dim}, expected {dim}")
        return op.apply
    if callable(op):
        return op
    raise RejectedInputError(f"{what} must be a LinearOperator or callable")


@dataclass(frozen=True)
class IterStats:
    """Convergence record of one solver invocation."""

    iterations: int
    residual_history: np.ndarray
    converged: bool
    stop_reason: str
    final_true_residual: Optional[float] = None

    def __post_init__(self):
        hist = np.asarray(self.residual_history, dtype=np.float64)
        object.__setattr__(self, "residual_history", hist)
        if hist.size == 0:
            raise RejectedInputError("residual_history must be nonempty")
        if self.iterations != hist.size - 1:
            raise RejectedInputError("iterations must equal len(residual_history) - 1")


def _check_common(b, tol_rel: float, maxit: int):
    if tol_rel <= 0:
        raise RejectedInputError("tol_rel must be positive")
    if maxit < 1:
        raise RejectedInputError("maxit must be at least 1")
    return np.ascontiguousarray(b, dtype=np.float64)


def pcg(a: OperatorLike, m: OperatorLike, b, tol_rel: float, maxit: int
        ) -> tuple[np.ndarray, IterStats]:
    """Preconditioned conjugate gradients for SPD operators.

    ``m`` applies the (approximate) inverse of an SPD preconditioner; pass
    None for unpreconditioned CG.  Nonpositive curvature p^T A p <= 0 stops
    with stop_reason 'breakdown' (the operator is not SPD).
    """
    b = _check_common(b, tol_rel, maxit)
    n = b.shape[0]
    a_apply = _as_apply(a, n, "operator")
    m_apply = _as_apply(m, n, "preconditioner")

    x = np.zeros(n)
    r = b.copy()
    rnorm = np.linalg.norm(r)
    hist = [rnorm]
    if rnorm == 0.0:
        return x, IterStats(0, np.array(hist), True, STOP_TOLERANCE)
    target = tol_rel * rnorm

    z = m_apply(r)
    p = z.copy()
    rz = float(r @ z)
    converged = False
    reason = STOP_MAXIT
    for _ in range(maxit):
        ap = a_apply(p)
        pap = float(p @ ap)
        if pap <= 0.0 or rz <= 0.0:
            reason = STOP_BREAKDOWN
            break
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        rnorm = np.linalg.norm(r)
        hist.append(rnorm)
        if rnorm <= target:
            converged = True
            reason = STOP_TOLERANCE
            break
        z = m_apply(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, IterStats(len(hist) - 1, np.array(hist), converged, reason)


def _orthogonalize(w: np.ndarray, basis: np.ndarray, j: int) -> tuple[np.ndarray, float]:
    """Modified Gram-Schmidt against basis[:j+1] with one selective reorth pass."""
    h = np.zeros(j + 2)
    norm_before = np.linalg.norm(w)
    for i in range(j + 1):
        hij = float(basis[i] @ w)
        h[i] = hij
        w -= hij * basis[i]
    norm_after = np.linalg.norm(w)
    # reorthogonalize when cancellation signals loss of orthogonality
    if norm_after < 0.7071067811865476 * norm_before:
        for i in range(j + 1):
            c = float(basis[i] @ w)
            if abs(c) > 1e-8 * max(norm_after, 1e-300):
                h[i] += c
                w -= c * basis[i]
        norm_after = np.linalg.norm(w)
    h[j + 1] = norm_after
    return h, norm_after


def _apply_givens(h: np.ndarray, cs: np.ndarray, sn: np.ndarray,
                  g: np.ndarray, j: int) -> float:
    """Rotate column j of the Hessenberg system; returns |new residual|."""
    for i in range(j):
        tmp = cs[i] * h[i] + sn[i] * h[i + 1]
        h[i + 1] = -sn[i] * h[i] + cs[i] * h[i + 1]
        h[i] = tmp
    denom = np.hypot(h[j], h[j + 1])
    if denom == 0.0:
        cs[j], sn[j] = 1.0, 0.0
    else:
        cs[j], sn[j] = h[j] / denom, h[j + 1] / denom
    h[j] = denom
    h[j + 1] = 0.0
    g[j + 1] = -sn[j] * g[j]
    g[j] = cs[j] * g[j]
    return abs(g[j + 1])


def gmres_right(a: OperatorLike, p: OperatorLike, b, tol_rel: float, maxit: int
                ) -> tuple[np.ndarray, IterStats]:
    """Right-preconditioned GMRES (fixed preconditioner, no restart).

    Minimizes ||b - A P^{-1} y|| over the growing Krylov space and returns
    x = P^{-1} y, so the recurrence residual is the true residual of x.
    """
    b = _check_common(b, tol_rel, maxit)
    n = b.shape[0]
    a_apply = _as_apply(a, n, "operator")
    p_apply = _as_apply(p, n, "preconditioner")

    beta = np.linalg.norm(b)
    if beta == 0.0:
        stats = IterStats(0, np.array([0.0]), True, STOP_TOLERANCE,
                          final_true_residual=0.0)
        return np.zeros(n), stats
    target = tol_rel * beta

    V = np.zeros((maxit + 1, n))
    V[0] = b / beta
    H = np.zeros((maxit + 1, maxit))
    cs = np.zeros(maxit)
    sn = np.zeros(maxit)
    g = np.zeros(maxit + 1)
    g[0] = beta
    hist = [beta]

    converged = False
    reason = STOP_MAXIT
    k = 0
    for j in range(maxit):
        # fresh buffer: _orthogonalize works in place and must not alias V
        w = np.array(a_apply(p_apply(V[j])), dtype=np.float64)
        hcol, hnew = _orthogonalize(w, V, j)
        res = _apply_givens(hcol, cs, sn, g, j)
        H[: j + 2, j] = hcol
        hist.append(res)
        k = j + 1
        if res <= target:
            converged = True
            reason = STOP_TOLERANCE
            break
        if hnew <= 1e-14 * beta:
            reason = STOP_BREAKDOWN
            break
        V[j + 1] = w / hnew

    y = sla.solve_triangular(H[:k, :k], g[:k], lower=False)
    x = p_apply(V[:k].T @ y)
    true_res = float(np.linalg.norm(b - a_apply(x)))
    stats = IterStats(k, np.array(hist), converged, reason,
                      final_true_residual=true_res)
    return x, stats


def fgmres(a: OperatorLike, p: OperatorLike, b, tol_rel: float, maxit: int
           ) -> tuple[np.ndarray, IterStats]:
    """Flexible GMRES: the right preconditioner may vary per iteration.

    The preconditioned basis vectors z_j = P_j^{-1} v_j are stored and the
    final iterate is x = Z y.  The recurrence residual is checked against the
    explicitly computed ||b - A x|| and reported in final_true_residual.
    """
    b = _check_common(b, tol_rel, maxit)
    n = b.shape[0]
    a_apply = _as_apply(a, n, "operator")
    p_apply = _as_apply(p, n, "preconditioner")

    beta = np.linalg.norm(b)
    if beta == 0.0:
        stats = IterStats(0, np.array([0.0]), True, STOP_TOLERANCE,
                          final_true_residual=0.0)
        return np.zeros(n), stats
    target = tol_rel * beta

    V = np.zeros((maxit + 1, n))
    Z = np.zeros((maxit, n))
    V[0] = b / beta
    H = np.zeros((maxit + 1, maxit))
    cs = np.zeros(maxit)
    sn = np.zeros(maxit)
    g = np.zeros(maxit + 1)
    g[0] = beta
    hist = [beta]

    converged = False
    reason = STOP_MAXIT
    k = 0
    for j in range(maxit):
        Z[j] = p_apply(V[j])
        w = np.array(a_apply(Z[j]), dtype=np.float64)
        hcol, hnew = _orthogonalize(w, V, j)
        res = _apply_givens(hcol, cs, sn, g, j)
        H[: j + 2, j] = hcol
        hist.append(res)
        k = j + 1
        if res <= target:
            converged = True
            reason = STOP_TOLERANCE
            break
        if hnew <= 1e-14 * beta:
            reason = STOP_BREAKDOWN
            break
        V[j + 1] = w / hnew

    y = sla.solve_triangular(H[:k, :k], g[:k], lower=False)
    x = Z[:k].T @ y
    true_res = float(np.linalg.norm(b - a_apply(x)))
    stats = IterStats(k, np.array(hist), converged, reason,
                      final_true_residual=true_res)
    return x, stats
