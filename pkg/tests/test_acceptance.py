"""Acceptance criteria: property-based checks plus trend reproduction.

Each test prints one PASS line with its measured numbers (visible with
pytest -s or in the captured output of a failure).  The exact iteration
counts of the reference experiments are not reproduction targets; the
trends and tolerances asserted here are.
"""

import time

import numpy as np
import pytest

from al3.block_al import (
    AugmentedOperator,
    BlockSystem,
    ExactPrecondSolver,
    PrecondParams,
    apply_precond_exact,
    apply_precond_inexact,
    augment_rhs,
    build_inner_factors,
    dense_augmented,
    dense_precond,
    dense_system,
    solve,
)
from al3.cli import RunConfig, run_bench
from al3.factor import ic_threshold
from al3.krylov import LinearOperator, fgmres, gmres_right, pcg
from al3.probgen import GenSpec, generate, random_solution, sizes_for, verify_structure
from al3.sparse_core import SparseMatrix
from al3.spectral import (
    compute_spectrum,
    quad_roots,
    sample_from_vector,
    theorem_bounds,
)
from tests.conftest import make_block_system, random_spd

GAMMAS = (1.0, 10.0, 100.0)
ALPHA_MULTS = (1.0, 2.0, 100.0)


def announce(num, message):
    print(f"\nACCEPTANCE {num}: PASS - {message}")


@pytest.fixture(scope="module")
def containment_sweep():
    """>= 20 generated desk systems plus engineered Ker(B) = {0} systems,

    each paired with (gamma, alpha) drawn across the full grid; spectra and
    bounds computed once and shared by criteria 1 and 2."""
    t0 = time.perf_counter()
    combos = [(g, g * mult) for g in GAMMAS for mult in ALPHA_MULTS]
    cases = []
    systems = []
    for seed in range(10):
        for base in (2, 3):
            systems.append((generate(GenSpec(level=1, seed=seed, base_cells=base)),
                            False))
    # Ker(B) = {0}: B square and invertible, so the lower bound is asserted
    for seed in (100, 101):
        systems.append((make_block_system(seed=seed, n=24, m=12, p=12,
                                          coupling=0.05), True))
    assert len(systems) >= 20
    results = []
    for idx, (system, trivial_kernel) in enumerate(systems):
        assert system.total <= 400
        picks = [combos[idx % 9], combos[(idx + 4) % 9]]
        if trivial_kernel:
            picks = combos  # exercise the asserted lower bound broadly
        for gamma, alpha in picks:
            params = PrecondParams(gamma=gamma, alpha=alpha)
            spectrum = compute_spectrum(system, params)
            bounds = theorem_bounds(system, params)
            dominance = verify_structure(system).dominance_margin
            results.append({
                "system": system,
                "trivial_kernel": trivial_kernel,
                "params": params,
                "spectrum": spectrum,
                "bounds": bounds,
                "dominance": dominance,
            })
    elapsed = time.perf_counter() - t0
    return results, elapsed, len(systems)


def test_criterion_1_theorem_containment(containment_sweep):
    results, elapsed, n_systems = containment_sweep
    lower_holds = 0
    lower_checked = 0
    for case in results:
        lam = case["spectrum"].eigenvalues
        bounds = case["bounds"]
        scale = np.abs(lam).max()
        assert np.abs(lam.imag).max() <= 1e-8 * scale
        assert lam.real.min() > 0.0
        assert lam.real.max() < bounds.upper
        if case["trivial_kernel"]:
            assert lam.real.min() >= bounds.lower - 1e-10
        else:
            lower_checked += 1
            lower_holds += int(lam.real.min() >= bounds.lower - 1e-10)
    assert elapsed <= 120.0
    announce(1, f"{n_systems} systems / {len(results)} spectra in {elapsed:.1f}s; "
                f"all real, positive, below the upper bound; lower bound asserted "
                f"on Ker(B)={{0}} cases and reported to hold on "
                f"{lower_holds}/{lower_checked} nontrivial-kernel cases")


def test_criterion_2_dominance_ceiling(containment_sweep):
    results, _, _ = containment_sweep
    checked = 0
    for case in results:
        if case["dominance"] is None or case["dominance"] <= 0:
            continue
        lam = case["spectrum"].eigenvalues
        assert lam.real.max() < 2.0 + 1e-10
        checked += 1
    assert checked >= 20
    announce(2, f"all eigenvalues < 2 + 1e-10 on {checked} dominance-verified spectra")


def test_criterion_3_clustering_limit():
    system = generate(GenSpec(level=1, seed=7, base_cells=2))
    gamma = 5.0
    mults = (2.0, 20.0, 200.0, 2000.0)
    fracs = []
    for mult in mults:
        spectrum = compute_spectrum(system, PrecondParams(gamma=gamma, alpha=gamma * mult))
        fracs.append(spectrum.cluster_fraction(0.1))
    assert all(fracs[i + 1] >= fracs[i] for i in range(len(fracs) - 1))

    rng = np.random.default_rng(0)
    ratios_b, ratios_c = [], []
    for _ in range(3):
        z = rng.standard_normal(system.p)
        y = system.b._scipy.T @ z
        y /= np.linalg.norm(y)
        first = sample_from_vector(system, PrecondParams(gamma=gamma, alpha=gamma * mults[0]), y)
        last = sample_from_vector(system, PrecondParams(gamma=gamma, alpha=gamma * mults[-1]), y)
        gap_b_first, gap_b_last = abs(first.b_coef - 2.0), abs(last.b_coef - 2.0)
        gap_c_first, gap_c_last = abs(first.c_coef - 1.0), abs(last.c_coef - 1.0)
        assert gap_b_first < 1e-14 or gap_b_last <= gap_b_first / 5.0
        assert gap_c_last <= gap_c_first / 5.0
        ratios_b.append(gap_b_first / max(gap_b_last, 1e-300))
        ratios_c.append(gap_c_first / max(gap_c_last, 1e-300))
    announce(3, f"cluster fraction at delta=0.1 nondecreasing {[f'{f:.3f}' for f in fracs]}; "
                f"|b-2| shrank {min(ratios_b):.0f}x, |c-1| shrank {min(ratios_c):.0f}x "
                f"(required >= 5x)")


@pytest.fixture(scope="module")
def level2_system():
    system = generate(GenSpec(level=2, seed=1))
    ustar = random_solution(1, system.total, 0)
    b = AugmentedOperator.plain(system).apply(ustar)
    return system, ustar, b


def test_criterion_4_gamma_trend(level2_system):
    system, ustar, b = level2_system
    iters = {}
    for gamma in (1.0, 1000.0):
        _, report = solve(system, PrecondParams(gamma=gamma), b, u_ref=ustar)
        assert report.converged
        iters[gamma] = report.outer_iters
    # >= 30% more iterations at gamma=1, with one iteration of slack on the
    # high-gamma side
    assert iters[1.0] >= 1.3 * max(iters[1000.0] - 1, 1)
    announce(4, f"level-2 outer iterations: gamma=1 -> {iters[1.0]}, "
                f"gamma=1000 -> {iters[1000.0]} "
                f"(ratio {iters[1.0] / iters[1000.0]:.2f}, required >= 1.3 with slack)")


def test_criterion_5_mesh_independence():
    gamma = 100.0
    iters = []
    sizes = []
    for level in (1, 2, 3):
        system = generate(GenSpec(level=level, seed=1))
        sizes.append(system.total)
        ustar = random_solution(1, system.total, 0)
        b = AugmentedOperator.plain(system).apply(ustar)
        _, report = solve(system, PrecondParams(gamma=gamma), b, u_ref=ustar)
        assert report.converged
        iters.append(report.outer_iters)
    assert sizes[-1] / sizes[0] >= 50.0
    assert max(iters) - min(iters) <= 4
    announce(5, f"gamma=100 outer iterations {iters} across sizes {sizes} "
                f"({sizes[-1] / sizes[0]:.0f}x span); variation "
                f"{max(iters) - min(iters)} <= 4")


def test_criterion_6_equivalence_and_exactness():
    rng = np.random.default_rng(3)
    system = make_block_system(seed=13, n=24, m=16, p=8, coupling=0.05)
    params = PrecondParams(gamma=25.0)

    # (a) the original and augmented systems have the same solution
    bvec = rng.standard_normal(system.total)
    x1 = np.linalg.solve(dense_system(system), bvec)
    b1, b2, b3 = system.split(bvec)
    bbar = augment_rhs(system, params, b1, b2, b3)
    x2 = np.linalg.solve(dense_augmented(system, params), bbar)
    rel_a = np.linalg.norm(x1 - x2) / np.linalg.norm(x1)
    assert rel_a <= 1e-10

    # (b) two-factor application equals the dense P solve
    pd = dense_precond(system, params)
    r = rng.standard_normal(system.total)
    w_fact = apply_precond_exact(system, params, r)
    w_dense = np.linalg.solve(pd, r)
    rel_b = np.linalg.norm(w_fact - w_dense) / np.linalg.norm(w_dense)
    assert rel_b <= 1e-10

    # (c) inexact application converges to the exact one
    tight = PrecondParams(gamma=25.0, inner_gmres_tol=1e-12, inner_gmres_maxit=400,
                          pcg_tol=1e-12, pcg_maxit=1000,
                          droptol_a22=0.0, droptol_s=0.0)
    factors = build_inner_factors(system, tight)
    w_inexact, _ = apply_precond_inexact(system, tight, factors, r)
    w_exact = apply_precond_exact(system, tight, r)
    rel_c = np.linalg.norm(w_inexact - w_exact) / np.linalg.norm(w_exact)
    assert rel_c <= 1e-8

    # (d) typo regression: the derived inner right-hand side satisfies
    # P w = r while the printed variant (middle residual in the last slot,
    # evaluable only when m == p) does not
    sq = make_block_system(seed=17, n=20, m=10, p=10, coupling=0.05)
    params_sq = PrecondParams(gamma=9.0)
    import scipy.linalg as sla
    from al3.block_al import resolve_q
    q = resolve_q(sq, params_sq)
    r = rng.standard_normal(sq.total)
    r1, r2, r3 = sq.split(r)
    r2p = r2 - params_sq.gamma * (sq.b._scipy.T @ q.solve(r3))
    k2 = np.block([
        [sq.a22.to_array(), sq.b.to_array().T],
        [sq.b.to_array(), -(1.0 / params_sq.alpha) * q.to_dense()],
    ])
    pd_sq = dense_precond(sq, params_sq)
    a11d = sq.a11.to_array()

    def assemble(w23):
        w2, w3 = w23[: sq.m], w23[sq.m:]
        w1 = np.linalg.solve(a11d, r1 - sq.a12.to_array() @ w2)
        return np.concatenate([w1, w2, w3])

    w_derived = assemble(np.linalg.solve(k2, np.concatenate([r2p, r3])))
    w_printed = assemble(np.linalg.solve(k2, np.concatenate([r2p, r2])))
    res_derived = np.linalg.norm(pd_sq @ w_derived - r) / np.linalg.norm(r)
    res_printed = np.linalg.norm(pd_sq @ w_printed - r) / np.linalg.norm(r)
    assert res_derived <= 1e-10
    assert res_printed > 1e-6
    announce(6, f"equivalence {rel_a:.1e}; factored-vs-dense {rel_b:.1e}; "
                f"inexact-vs-exact {rel_c:.1e}; derived inner rhs residual "
                f"{res_derived:.1e} vs printed-variant residual {res_printed:.1e}")


def test_criterion_7_solver_oracles():
    rng = np.random.default_rng(11)

    spd = random_spd(rng, 50)
    b = rng.standard_normal(50)
    x_pcg, st = pcg(LinearOperator.from_dense(spd), None, b, 1e-12, 300)
    oracle = np.linalg.solve(spd, b)
    rel_pcg = np.linalg.norm(x_pcg - oracle) / np.linalg.norm(oracle)
    assert st.converged and rel_pcg <= 1e-8

    nonsym = rng.standard_normal((50, 50)) + 8 * np.eye(50)
    b = rng.standard_normal(50)
    x_g, st = gmres_right(LinearOperator.from_dense(nonsym), None, b, 1e-12, 120)
    oracle = np.linalg.solve(nonsym, b)
    rel_gmres = np.linalg.norm(x_g - oracle) / np.linalg.norm(oracle)
    assert st.converged and rel_gmres <= 1e-8

    p_exact = LinearOperator(50, lambda v: np.linalg.solve(nonsym, v))
    _, st_g = gmres_right(LinearOperator.from_dense(nonsym), p_exact, b, 1e-8, 50)
    _, st_f = fgmres(LinearOperator.from_dense(nonsym), p_exact, b, 1e-8, 50)
    assert st_g.iterations == 1
    assert st_f.iterations == 1

    a = random_spd(rng, 60, shift=2.0)
    fac = ic_threshold(SparseMatrix.from_dense(a), 0.0)
    L = fac.L.to_array()
    rel_ic = np.linalg.norm(L @ L.T - a) / np.linalg.norm(a)
    assert rel_ic <= 1e-12
    announce(7, f"PCG {rel_pcg:.1e}, GMRES {rel_gmres:.1e} vs dense oracles; "
                f"exact right preconditioning converged in 1 iteration; "
                f"complete IC residual {rel_ic:.1e}")


def test_criterion_8_quadratic_oracle():
    qs = quad_roots(0.0, 2.0, 2.0, 1.0, 2.0)
    assert abs(qs.root1 - 2.0 / 3.0) <= 1e-12
    assert abs(qs.root2 - 1.0) <= 1e-12

    rng = np.random.default_rng(8)
    worst_sum, worst_prod = 0.0, 0.0
    for _ in range(1000):
        p = rng.uniform(0.0, 10.0)
        q = rng.uniform(1e-3, 10.0)
        t = rng.uniform(0.0, 100.0)
        gamma = rng.uniform(1e-2, 100.0)
        alpha = gamma * rng.uniform(1.0, 1000.0)
        qs = quad_roots(p, q, t, gamma, alpha)
        worst_sum = max(worst_sum, abs(qs.root1 + qs.root2 - qs.b_coef)
                        / max(1.0, abs(qs.b_coef)))
        worst_prod = max(worst_prod, abs(qs.root1 * qs.root2 - qs.c_coef)
                         / max(1.0, abs(qs.c_coef)))
    assert worst_sum <= 1e-10
    assert worst_prod <= 1e-10
    announce(8, f"hand roots {{2/3, 1}} reproduced; Vieta residuals over 1000 "
                f"samples: sum {worst_sum:.1e}, product {worst_prod:.1e}")


def test_criterion_9_end_to_end_bench(tmp_path):
    t0 = time.perf_counter()
    out = tmp_path / "bench.csv"
    cfg = RunConfig(command="bench", gammas=[1.0, 10.0, 100.0, 1000.0],
                    levels=[1, 2, 3], reps=3, seed=1, out=out)
    import io
    rows, all_converged = run_bench(cfg, stream=io.StringIO())
    elapsed = time.perf_counter() - t0
    assert elapsed <= 600.0
    assert all_converged
    assert len(rows) == 12

    import csv
    with open(out) as fh:
        csv_rows = list(csv.DictReader(fh))
    assert len(csv_rows) == 12
    assert set(csv_rows[0].keys()) == {"level", "size", "gamma", "alpha", "iter",
                                       "cpu_s", "err", "iter_in", "iter_pcg",
                                       "converged"}
    worst_err = 0.0
    for row in csv_rows:
        if row["converged"] == "yes":
            err = float(row["err"])
            assert err <= 1e-4
            worst_err = max(worst_err, err)
    announce(9, f"12-cell bench (levels 1-3, gamma 1..1000, 3 reps) in "
                f"{elapsed:.0f}s; all cells converged; worst Err {worst_err:.2e} "
                f"<= 1e-4")
