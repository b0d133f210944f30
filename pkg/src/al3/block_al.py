"""Block 3x3 saddle-point systems, their augmentation, and the P_{gamma,alpha}
preconditioner applied exactly (desk scale) or inexactly (the solver pipeline).

The preconditioner is applied through its block factorization: subtract
gamma * B^T Q^{-1} r3 from the middle residual block, solve the stabilized
2x2 subsystem [[A22, B^T], [B, -Q/alpha]] (w2; w3) = (r2'; r3), then solve
A11 w1 = r1 - A12 w2.  The augmented block A22 + gamma B^T Q^{-1} B is never
assembled anywhere in this module.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union
from weakref import WeakKeyDictionary

import numpy as np
import scipy.linalg as sla

from . import krylov
from .errors import (
    DeskScaleError,
    DimensionError,
    InnerSolveError,
    RejectedInputError,
)
from .factor import LowerTriangularFactor, ic_threshold_shifted
from .krylov import IterStats, LinearOperator
from .sparse_core import SparseMatrix, as_vector, mm_read, mm_write, spmv

__all__ = [
    "BlockSystem",
    "PrecondParams",
    "AugmentedOperator",
    "InnerPrecondFactors",
    "InnerApplyStats",
    "SolveReport",
    "ExactPrecondSolver",
    "augment_rhs",
    "apply_augmented",
    "apply_precond_exact",
    "apply_precond_inexact",
    "apply_inner_block_precond",
    "build_inner_factors",
    "inner_factors_for",
    "solve",
    "dense_system",
    "dense_augmented",
    "dense_precond",
    "save_system",
    "load_system",
]

DESK_CAP = 2000
_SYM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class BlockSystem:
    """The five structural blocks of the 3x3 system.

    A21 is never stored; it is -A12^T by convention.  A11 (n x n), A22
    (m x m) and Mp (p x p) must be symmetric to 1e-12 relative.  Full row
    rank of B is a modeling assumption checked by probgen.verify_structure,
    not at construction.
    """

    a11: SparseMatrix
    a12: SparseMatrix
    a22: SparseMatrix
    b: SparseMatrix
    mp: SparseMatrix

    def __post_init__(self):
        n, m, p = self.a11.nrows, self.a22.nrows, self.b.nrows
        checks = [
            (self.a11.shape == (n, n), f"A11 must be square, got {self.a11.shape}"),
            (self.a12.shape == (n, m), f"A12 must be {n}x{m}, got {self.a12.shape}"),
            (self.a22.shape == (m, m), f"A22 must be square, got {self.a22.shape}"),
            (self.b.shape == (p, m), f"B must be {p}x{m}, got {self.b.shape}"),
            (self.mp.shape == (p, p), f"Mp must be {p}x{p}, got {self.mp.shape}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise DimensionError(msg)
        for name, mat in (("A11", self.a11), ("A22", self.a22), ("Mp", self.mp)):
            res = mat.symmetry_residual()
            if res > _SYM_TOL:
                raise RejectedInputError(
                    f"{name} symmetry residual {res:.3e} exceeds 1e-12"
                )

    @property
    def n(self) -> int:
        return self.a11.nrows

    @property
    def m(self) -> int:
        return self.a22.nrows

    @property
    def p(self) -> int:
        return self.b.nrows

    @property
    def total(self) -> int:
        return self.n + self.m + self.p

    def split(self, u) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        v = as_vector(u, self.total, "block vector")
        return v[: self.n], v[self.n: self.n + self.m], v[self.n + self.m:]


@dataclass(frozen=True)
class PrecondParams:
    """Parameters of P_{gamma,alpha} and of its inexact application.

    alpha defaults to 2 * gamma; Q defaults to diag(Mp).  The drop tolerances
    and inner iteration controls default to the working values of the solver
    pipeline (1e-3 / 1e-2 drops, loose 0.1 inner tolerances, 5 PCG steps).
    """

    gamma: float
    alpha: Optional[float] = None
    q_choice: Union[str, SparseMatrix] = "diag_mp"
    droptol_a22: float = 1e-3
    droptol_s: float = 1e-2
    inner_gmres_tol: float = 0.1
    inner_gmres_maxit: int = 200
    pcg_tol: float = 0.1
    pcg_maxit: int = 5

    def __post_init__(self):
        if self.gamma <= 0:
            raise RejectedInputError("gamma must be positive")
        if self.alpha is None:
            object.__setattr__(self, "alpha", 2.0 * self.gamma)
        if self.alpha < self.gamma:
            raise RejectedInputError(
                f"alpha ({self.alpha}) must be at least gamma ({self.gamma})"
            )
        if isinstance(self.q_choice, str) and self.q_choice not in ("diag_mp", "identity"):
            raise RejectedInputError(
                "q_choice must be 'diag_mp', 'identity', or a SparseMatrix"
            )
        if self.droptol_a22 < 0 or self.droptol_s < 0:
            raise RejectedInputError("drop tolerances must be nonnegative")
        if self.inner_gmres_tol <= 0 or self.pcg_tol <= 0:
            raise RejectedInputError("inner tolerances must be positive")
        if self.inner_gmres_maxit < 1 or self.pcg_maxit < 1:
            raise RejectedInputError("inner iteration caps must be at least 1")

    def cache_key(self) -> tuple:
        qkey = self.q_choice if isinstance(self.q_choice, str) else id(self.q_choice)
        return (self.gamma, self.alpha, qkey, self.droptol_a22, self.droptol_s)


# -- Q handling ---------------------------------------------------------------

class QOperator:
    """SPD weight matrix Q with inverse application.

    Diagonal Q (the default diag(Mp), identity, or a structurally diagonal
    custom matrix) inverts by elementwise division; a general sparse Q solves
    densely at desk scale and by tightly converged Jacobi-PCG beyond.
    """

    def __init__(self, p: int, diag: Optional[np.ndarray] = None,
                 matrix: Optional[SparseMatrix] = None):
        self.p = p
        self.diag = diag
        self.matrix = matrix
        self._cho = None
        if diag is not None and p and np.any(diag <= 0):
            raise RejectedInputError("Q diagonal must be positive")

    @property
    def is_diagonal(self) -> bool:
        return self.diag is not None

    def apply(self, v: np.ndarray) -> np.ndarray:
        if self.is_diagonal:
            return v * self.diag
        return spmv(self.matrix, v)

    def solve(self, v: np.ndarray) -> np.ndarray:
        if self.is_diagonal:
            return v / self.diag
        if self.p <= DESK_CAP:
            if self._cho is None:
                self._cho = sla.cho_factor(self.matrix.to_array())
            return sla.cho_solve(self._cho, v)
        jac = 1.0 / self.matrix.diagonal()
        x, stats = krylov.pcg(
            LinearOperator.from_sparse(self.matrix),
            LinearOperator(self.p, lambda r: r * jac),
            v, 1e-13, 20 * self.p,
        )
        if not stats.converged:
            raise InnerSolveError("Q solve failed to converge")
        return x

    def to_dense(self) -> np.ndarray:
        if self.is_diagonal:
            return np.diag(self.diag)
        return self.matrix.to_array()

    def eig_bounds(self) -> tuple[float, float]:
        if self.is_diagonal:
            if self.p == 0:
                return 1.0, 1.0
            return float(self.diag.min()), float(self.diag.max())
        if self.p > DESK_CAP:
            raise DeskScaleError("eigenvalue bounds of a general Q need desk scale")
        w = sla.eigvalsh(self.matrix.to_array())
        return float(w[0]), float(w[-1])

    def as_sparse(self) -> SparseMatrix:
        if self.is_diagonal:
            return SparseMatrix.from_diagonal(self.diag)
        return self.matrix


def resolve_q(sys: BlockSystem, params: PrecondParams) -> QOperator:
    p = sys.p
    choice = params.q_choice
    if isinstance(choice, SparseMatrix):
        if choice.shape != (p, p):
            raise DimensionError(f"custom Q must be {p}x{p}, got {choice.shape}")
        diag = choice.diagonal()
        if choice.nnz == np.count_nonzero(diag):
            return QOperator(p, diag=diag)
        return QOperator(p, matrix=choice)
    if choice == "identity":
        return QOperator(p, diag=np.ones(p))
    diag = sys.mp.diagonal()
    if p and np.any(diag <= 0):
        raise RejectedInputError("diag(Mp) must be positive to serve as Q")
    return QOperator(p, diag=diag)


def _gamma_q(sys: BlockSystem, params) -> tuple[float, Optional[QOperator]]:
    """Accept PrecondParams or a bare gamma >= 0 (default Q) for the
    augmentation pieces; gamma = 0 reduces to the unaugmented system."""
    if isinstance(params, PrecondParams):
        return params.gamma, resolve_q(sys, params)
    gamma = float(params)
    if gamma < 0:
        raise RejectedInputError("gamma must be nonnegative")
    if gamma == 0.0:
        return 0.0, None
    return gamma, resolve_q(sys, PrecondParams(gamma=gamma))


# -- the augmented operator ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class AugmentedOperator:
    """Matrix-free action of the augmented block matrix.

    The (2,2) block A22 + gamma B^T Q^{-1} B is applied as three products and
    never assembled.  gamma = 0 gives the original block operator.
    """

    sys: BlockSystem
    gamma: float
    q: Optional[QOperator]

    @classmethod
    def from_params(cls, sys: BlockSystem, params) -> "AugmentedOperator":
        gamma, q = _gamma_q(sys, params)
        return cls(sys, gamma, q)

    @classmethod
    def plain(cls, sys: BlockSystem) -> "AugmentedOperator":
        return cls(sys, 0.0, None)

    @property
    def dim(self) -> int:
        return self.sys.total

    def apply(self, u) -> np.ndarray:
        s = self.sys
        u1, u2, u3 = s.split(u)
        bu2 = spmv(s.b, u2)
        top = spmv(s.a11, u1) + spmv(s.a12, u2)
        mid = -(s.a12._scipy.T @ u1) + spmv(s.a22, u2) + s.b._scipy.T @ u3
        if self.gamma != 0.0:
            mid = mid + self.gamma * (s.b._scipy.T @ self.q.solve(bu2))
        return np.concatenate([top, mid, bu2])

    def operator(self) -> LinearOperator:
        return LinearOperator(self.dim, self.apply)


def apply_augmented(op: AugmentedOperator, u) -> np.ndarray:
    return op.apply(u)


def augment_rhs(sys: BlockSystem, params, b1, b2, b3) -> np.ndarray:
    """Stack (b1; b2 + gamma B^T Q^{-1} b3; b3)."""
    v1 = as_vector(b1, sys.n, "b1")
    v2 = as_vector(b2, sys.m, "b2")
    v3 = as_vector(b3, sys.p, "b3")
    gamma, q = _gamma_q(sys, params)
    if gamma != 0.0:
        v2 = v2 + gamma * (sys.b._scipy.T @ q.solve(v3))
    return np.concatenate([v1, v2, v3])


# -- dense desk-scale assemblies ----------------------------------------------

def _desk_guard(sys: BlockSystem, cap: int):
    if sys.total > cap:
        raise DeskScaleError(f"system size {sys.total} exceeds desk cap {cap}")


def dense_system(sys: BlockSystem, cap: int = DESK_CAP) -> np.ndarray:
    """Dense assembly of the original (unaugmented) 3x3 block matrix."""
    _desk_guard(sys, cap)
    a11, a12 = sys.a11.to_array(), sys.a12.to_array()
    a22, b = sys.a22.to_array(), sys.b.to_array()
    n, m, p = sys.n, sys.m, sys.p
    out = np.zeros((sys.total, sys.total))
    out[:n, :n] = a11
    out[:n, n:n + m] = a12
    out[n:n + m, :n] = -a12.T
    out[n:n + m, n:n + m] = a22
    out[n:n + m, n + m:] = b.T
    out[n + m:, n:n + m] = b
    return out


def dense_augmented(sys: BlockSystem, params, cap: int = DESK_CAP) -> np.ndarray:
    """Dense assembly of the augmented block matrix."""
    _desk_guard(sys, cap)
    gamma, q = _gamma_q(sys, params)
    out = dense_system(sys, cap)
    if gamma != 0.0:
        b = sys.b.to_array()
        qinv_b = np.linalg.solve(q.to_dense(), b)
        n, m = sys.n, sys.m
        out[n:n + m, n:n + m] += gamma * (b.T @ qinv_b)
    return out


def dense_precond(sys: BlockSystem, params: PrecondParams, cap: int = DESK_CAP) -> np.ndarray:
    """Dense assembly of the preconditioner P_{gamma,alpha}."""
    _desk_guard(sys, cap)
    if not isinstance(params, PrecondParams):
        raise RejectedInputError("dense_precond needs full PrecondParams")
    q = resolve_q(sys, params)
    n, m, p = sys.n, sys.m, sys.p
    a11, a12 = sys.a11.to_array(), sys.a12.to_array()
    a22, b = sys.a22.to_array(), sys.b.to_array()
    qd = q.to_dense()
    out = np.zeros((sys.total, sys.total))
    out[:n, :n] = a11
    out[:n, n:n + m] = a12
    if p:
        qinv_b = np.linalg.solve(qd, b)
        out[n:n + m, n:n + m] = a22 + params.gamma * (b.T @ qinv_b)
        out[n:n + m, n + m:] = (1.0 - params.gamma / params.alpha) * b.T
        out[n + m:, n:n + m] = b
        out[n + m:, n + m:] = -(1.0 / params.alpha) * qd
    else:
        out[n:n + m, n:n + m] = a22
    return out


# -- exact preconditioner application ------------------------------------------

class ExactPrecondSolver:
    """Applies P_{gamma,alpha}^{-1} exactly via the two-factor form.

    The trailing 2x2 stabilized block is LU-factored densely and A11 is
    Cholesky-factored, both once at construction, so repeated applications
    (e.g. column-wise assembly of P^{-1} A_bar) stay cheap.  Desk scale only.
    """

    def __init__(self, sys: BlockSystem, params: PrecondParams, cap: int = DESK_CAP):
        _desk_guard(sys, cap)
        self.sys = sys
        self.params = params
        self.q = resolve_q(sys, params)
        m, p = sys.m, sys.p
        k2 = np.zeros((m + p, m + p))
        k2[:m, :m] = sys.a22.to_array()
        if p:
            bd = sys.b.to_array()
            k2[:m, m:] = bd.T
            k2[m:, :m] = bd
            k2[m:, m:] = -(1.0 / params.alpha) * self.q.to_dense()
        self._lu = sla.lu_factor(k2)
        self._cho = sla.cho_factor(sys.a11.to_array())

    def apply(self, r) -> np.ndarray:
        s = self.sys
        r1, r2, r3 = s.split(r)
        r2p = r2
        if s.p:
            r2p = r2 - self.params.gamma * (s.b._scipy.T @ self.q.solve(r3))
        w23 = sla.lu_solve(self._lu, np.concatenate([r2p, r3]))
        w2, w3 = w23[: s.m], w23[s.m:]
        w1 = sla.cho_solve(self._cho, r1 - spmv(s.a12, w2))
        return np.concatenate([w1, w2, w3])


def apply_precond_exact(sys: BlockSystem, params: PrecondParams, r,
                        cap: int = DESK_CAP) -> np.ndarray:
    """One-shot exact application; build ExactPrecondSolver for repeated use."""
    return ExactPrecondSolver(sys, params, cap).apply(r)


# -- inexact preconditioner application ----------------------------------------

@dataclass(frozen=True, eq=False)
class InnerPrecondFactors:
    """Incomplete Cholesky factors backing the inexact application.

    l_a22 and l_s precondition the stabilized 2x2 solve; l_a11 preconditions
    the PCG stage.  s_matrix is the explicitly assembled S = Q/alpha + Mp.
    """

    l_a11: LowerTriangularFactor
    l_a22: LowerTriangularFactor
    l_s: LowerTriangularFactor
    s_matrix: SparseMatrix


def build_inner_factors(sys: BlockSystem, params: PrecondParams) -> InnerPrecondFactors:
    q = resolve_q(sys, params)
    s_mat = SparseMatrix.from_scipy(
        q.as_sparse()._scipy * (1.0 / params.alpha) + sys.mp._scipy
    )
    l_a11 = ic_threshold_shifted(sys.a11, params.droptol_a22)
    l_a22 = ic_threshold_shifted(sys.a22, params.droptol_a22)
    l_s = ic_threshold_shifted(s_mat, params.droptol_s)
    return InnerPrecondFactors(l_a11, l_a22, l_s, s_mat)


_FACTOR_CACHE: "WeakKeyDictionary[BlockSystem, dict]" = WeakKeyDictionary()


def inner_factors_for(sys: BlockSystem, params: PrecondParams) -> InnerPrecondFactors:
    """Cached factors, rebuilt whenever the parameters change."""
    per_sys = _FACTOR_CACHE.setdefault(sys, {})
    key = params.cache_key()
    factors = per_sys.get(key)
    if factors is None:
        factors = build_inner_factors(sys, params)
        per_sys[key] = factors
    return factors


def apply_inner_block_precond(factors: InnerPrecondFactors, b: SparseMatrix,
                              r2, r3) -> tuple[np.ndarray, np.ndarray]:
    """Apply the inverse of the block triangular [[A22_hat, 0], [B, -S_hat]]."""
    v2 = factors.l_a22.solve(as_vector(r2, b.ncols, "r2"))
    v3 = factors.l_s.solve(spmv(b, v2) - as_vector(r3, b.nrows, "r3"))
    return v2, v3


@dataclass(frozen=True)
class InnerApplyStats:
    """Iteration records of one inexact preconditioner application."""

    gmres: IterStats
    pcg: IterStats


def inner_system_operator(sys: BlockSystem, params: PrecondParams) -> LinearOperator:
    """Matrix-free [[A22, B^T], [B, -Q/alpha]] on R^{m+p}."""
    q = resolve_q(sys, params)
    m, p = sys.m, sys.p
    a22, b = sys.a22, sys.b

    def apply(v: np.ndarray) -> np.ndarray:
        v2, v3 = v[:m], v[m:]
        top = spmv(a22, v2) + b._scipy.T @ v3
        bot = spmv(b, v2) - q.apply(v3) / params.alpha
        return np.concatenate([top, bot])

    return LinearOperator(m + p, apply)


def apply_precond_inexact(sys: BlockSystem, params: PrecondParams,
                          factors: InnerPrecondFactors, r
                          ) -> tuple[np.ndarray, InnerApplyStats]:
    """Inexact P_{gamma,alpha}^{-1} r via inner GMRES and PCG.

    (i) shift the middle block by -gamma B^T Q^{-1} r3, (ii) solve the
    stabilized 2x2 subsystem with right-preconditioned GMRES at the loose
    inner tolerance, (iii) solve A11 w1 = r1 - A12 w2 with IC-preconditioned
    PCG.  Inner breakdowns raise InnerSolveError naming the failing stage.
    """
    s = sys
    q = resolve_q(sys, params)
    r1, r2, r3 = s.split(r)
    r2p = r2
    if s.p:
        r2p = r2 - params.gamma * (s.b._scipy.T @ q.solve(r3))

    kop = inner_system_operator(sys, params)

    def pin(v: np.ndarray) -> np.ndarray:
        v2, v3 = apply_inner_block_precond(factors, s.b, v[: s.m], v[s.m:])
        return np.concatenate([v2, v3])

    w23, gstats = krylov.gmres_right(
        kop, pin, np.concatenate([r2p, r3]),
        params.inner_gmres_tol, params.inner_gmres_maxit,
    )
    if gstats.stop_reason == krylov.STOP_BREAKDOWN and not gstats.converged:
        raise InnerSolveError("inner GMRES on the stabilized 2x2 block broke down")
    w2, w3 = w23[: s.m], w23[s.m:]

    w1, pstats = krylov.pcg(
        LinearOperator.from_sparse(s.a11),
        LinearOperator(s.n, factors.l_a11.solve),
        r1 - spmv(s.a12, w2),
        params.pcg_tol, params.pcg_maxit,
    )
    if pstats.stop_reason == krylov.STOP_BREAKDOWN:
        raise InnerSolveError("inner PCG on A11 broke down (operator not SPD?)")
    return np.concatenate([w1, w2, w3]), InnerApplyStats(gstats, pstats)


# -- the full solve -------------------------------------------------------------

@dataclass(frozen=True)
class SolveReport:
    """Mirror of the experiment tables: outer iterations, wall time, relative
    error against a reference solution (when known), and total inner counts."""

    outer_iters: int
    wall_seconds: float
    err: Optional[float]
    iter_in: int
    iter_pcg: int
    converged: bool
    residual_history: np.ndarray


def solve(sys: BlockSystem, params: PrecondParams, b, u_ref=None,
          tol: float = 1e-7, maxit: int = 500,
          factors: Optional[InnerPrecondFactors] = None
          ) -> tuple[np.ndarray, SolveReport]:
    """FGMRES on the augmented system with the inexact preconditioner.

    ``b`` is the right-hand side of the original system; the augmented
    right-hand side is formed internally.  Stops when
    ||A_bar u_k - b_bar|| <= tol * ||b_bar|| (default 1e-7) from the zero
    initial guess.  Non-convergence is reported, not raised.
    """
    t0 = time.perf_counter()
    bvec = as_vector(b, sys.total, "rhs")
    if factors is None:
        factors = inner_factors_for(sys, params)
    b1, b2, b3 = sys.split(bvec)
    bbar = augment_rhs(sys, params, b1, b2, b3)
    abar = AugmentedOperator.from_params(sys, params)

    counts = {"in": 0, "pcg": 0}

    def precond(v: np.ndarray) -> np.ndarray:
        w, stats = apply_precond_inexact(sys, params, factors, v)
        counts["in"] += stats.gmres.iterations
        counts["pcg"] += stats.pcg.iterations
        return w

    u, ostats = krylov.fgmres(abar.operator(), precond, bbar, tol, maxit)
    wall = time.perf_counter() - t0
    err = None
    if u_ref is not None:
        ref = as_vector(u_ref, sys.total, "reference solution")
        denom = np.linalg.norm(ref)
        err = float(np.linalg.norm(u - ref) / denom) if denom else float(np.linalg.norm(u))
    report = SolveReport(
        outer_iters=ostats.iterations,
        wall_seconds=wall,
        err=err,
        iter_in=counts["in"],
        iter_pcg=counts["pcg"],
        converged=ostats.converged,
        residual_history=ostats.residual_history,
    )
    return u, report


# -- block-system persistence ----------------------------------------------------

_BLOCK_FILES = {
    "a11": "a11.mtx",
    "a12": "a12.mtx",
    "a22": "a22.mtx",
    "b": "b.mtx",
    "mp": "mp.mtx",
}
MANIFEST_NAME = "manifest.txt"


def save_system(sys: BlockSystem, directory, extra: Optional[dict] = None) -> None:
    """Write the five block .mtx files plus a key=value manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for attr, fname in _BLOCK_FILES.items():
        mm_write(getattr(sys, attr), d / fname)
    lines = [f"n={sys.n}", f"m={sys.m}", f"p={sys.p}"]
    for key, val in (extra or {}).items():
        lines.append(f"{key}={val}")
    (d / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_system(directory) -> tuple[BlockSystem, dict]:
    """Read a saved system; returns (system, manifest dict)."""
    d = Path(directory)
    manifest = {}
    mpath = d / MANIFEST_NAME
    if not mpath.exists():
        raise RejectedInputError(f"missing manifest {mpath}")
    for raw in mpath.read_text(encoding="ascii").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise RejectedInputError(f"malformed manifest line: {line!r}")
        key, val = line.split("=", 1)
        manifest[key.strip()] = val.strip()
    blocks = {attr: mm_read(d / fname) for attr, fname in _BLOCK_FILES.items()}
    system = BlockSystem(**blocks)
    for dim in ("n", "m", "p"):
        if dim not in manifest:
            raise RejectedInputError(f"manifest lacks required key '{dim}'")
        declared = int(manifest[dim])
        actual = getattr(system, dim)
        if declared != actual:
            raise RejectedInputError(
                f"manifest says {dim}={declared} but matrices give {actual}"
            )
    return system, manifest
