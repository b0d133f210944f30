"""al3: augmented-Lagrangian block preconditioning for 3x3 saddle-point systems.

A sparse linear-algebra toolkit built around the P_{gamma,alpha}
preconditioner for block systems of Stokes-Darcy type: CSR kernels and
Matrix Market I/O, threshold incomplete Cholesky, PCG / GMRES / FGMRES, the
exact and inexact preconditioner applications, a deterministic synthetic
problem generator, and a dense spectral-verification suite.
"""

from .block_al import (
    AugmentedOperator,
    BlockSystem,
    InnerPrecondFactors,
    PrecondParams,
    SolveReport,
    apply_augmented,
    apply_inner_block_precond,
    apply_precond_exact,
    apply_precond_inexact,
    augment_rhs,
    build_inner_factors,
    load_system,
    save_system,
    solve,
)
from .factor import (
    LowerTriangularFactor,
    dense_cholesky,
    dense_lu_solve,
    ic_threshold,
    ic_threshold_shifted,
    tri_solve,
)
from .krylov import IterStats, LinearOperator, fgmres, gmres_right, pcg
from .probgen import GenSpec, StructureReport, generate, random_solution, verify_structure
from .sparse_core import (
    DenseMatrix,
    SparseMatrix,
    mm_read,
    mm_write,
    spmv,
    transpose,
    two_norm_est,
)
from .spectral import (
    BoundReport,
    QuadSample,
    SpectrumReport,
    cluster_stats,
    compute_spectrum,
    dense_precond_matrix,
    eigenvalues_dense,
    kerb_eigs,
    quad_roots,
    theorem_bounds,
)

__version__ = "0.1.0"
