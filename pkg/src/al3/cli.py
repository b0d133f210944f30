"""Command-line front end: generate problems, run solves and sweeps, emit
spectra, and render bench tables in the layout of the experiment tables.

Subcommands: gen, solve, spectrum, bench.  Exit code is 0 iff every requested
solve converged.  AL3_THREADS caps how many bench cells run concurrently.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .block_al import (
    AugmentedOperator,
    BlockSystem,
    PrecondParams,
    SolveReport,
    build_inner_factors,
    load_system,
    save_system,
    solve,
)
from .errors import Al3Error, RejectedInputError
from .probgen import GenSpec, generate, random_solution, sizes_for
from .spectral import branch_counts, cluster_stats, compute_spectrum, theorem_bounds

__all__ = ["RunConfig", "parse_args", "run_bench", "main"]

DEFAULT_OUTER_TOL = 1e-7
DEFAULT_OUTER_MAXIT = 500
DEFAULT_REPS = 10
CLUSTER_DELTAS = (0.5, 0.2, 0.1, 0.05, 0.01)


@dataclass
class RunConfig:
    """Parsed invocation: command, problem source, and solver controls."""

    command: str
    gen_spec: Optional[GenSpec] = None
    mtx_dir: Optional[Path] = None
    params: Optional[PrecondParams] = None
    outer_tol: float = DEFAULT_OUTER_TOL
    outer_maxit: int = DEFAULT_OUTER_MAXIT
    out: Optional[Path] = None
    report_out: Optional[Path] = None
    reps: int = DEFAULT_REPS
    gammas: list = field(default_factory=list)
    levels: list = field(default_factory=list)
    seed: int = 0
    base_cells: int = 4
    jump_lo: float = 1e-4
    jump_hi: float = 1e4
    coupling_scale: Optional[float] = None

    def __post_init__(self):
        if self.outer_tol <= 0:
            raise RejectedInputError("outer tolerance must be positive")
        if self.reps < 1:
            raise RejectedInputError("repetitions must be at least 1")
        if self.outer_maxit < 1:
            raise RejectedInputError("maxit must be at least 1")


def _add_source_args(sub, with_dir: bool = True):
    if with_dir:
        sub.add_argument("--dir", type=Path, default=None,
                         help="directory holding a11/a12/a22/b/mp .mtx + manifest")
    sub.add_argument("--level", type=int, default=None, help="generator level")
    sub.add_argument("--seed", type=int, default=0, help="generator seed")
    sub.add_argument("--base-cells", type=int, default=4,
                     help="pressure cells per side at level 1")
    sub.add_argument("--jump-lo", type=float, default=1e-4)
    sub.add_argument("--jump-hi", type=float, default=1e4)
    sub.add_argument("--coupling-scale", type=float, default=None)


def _add_precond_args(sub):
    sub.add_argument("--gamma", type=float, required=True)
    sub.add_argument("--alpha", type=float, default=None,
                     help="defaults to 2*gamma")
    sub.add_argument("--tol", type=float, default=DEFAULT_OUTER_TOL)
    sub.add_argument("--maxit", type=int, default=DEFAULT_OUTER_MAXIT)
    sub.add_argument("--inner-tol", type=float, default=0.1)
    sub.add_argument("--inner-maxit", type=int, default=200)
    sub.add_argument("--pcg-maxit", type=int, default=5)
    sub.add_argument("--droptol-a22", type=float, default=1e-3)
    sub.add_argument("--droptol-s", type=float, default=1e-2)
    sub.add_argument("--q", choices=("diag-mp", "identity"), default="diag-mp")


def _float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated int list: {text!r}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="al3",
        description="augmented-Lagrangian block preconditioning toolkit",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    gen = subs.add_parser("gen", help="generate a block system and write .mtx files")
    _add_source_args(gen, with_dir=False)
    gen.add_argument("--out", type=Path, required=True)

    slv = subs.add_parser("solve", help="solve one system with the inexact pipeline")
    _add_source_args(slv)
    _add_precond_args(slv)

    spec = subs.add_parser("spectrum", help="dense spectrum, bounds, cluster report")
    _add_source_args(spec)
    spec.add_argument("--gamma", type=float, required=True)
    spec.add_argument("--alpha", type=float, default=None)
    spec.add_argument("--out", type=Path, required=True, help="eigenvalue CSV path")
    spec.add_argument("--report", type=Path, default=None,
                      help="also write the JSON report here")

    bench = subs.add_parser("bench", help="(level, gamma) sweep with averaged stats")
    _add_source_args(bench, with_dir=False)
    bench.add_argument("--gamma", type=_float_list, required=True,
                       help="comma-separated gamma list")
    bench.add_argument("--levels", type=_int_list, required=True,
                       help="comma-separated level list")
    bench.add_argument("--reps", type=int, default=DEFAULT_REPS)
    bench.add_argument("--tol", type=float, default=DEFAULT_OUTER_TOL)
    bench.add_argument("--maxit", type=int, default=DEFAULT_OUTER_MAXIT)
    bench.add_argument("--out", type=Path, default=None, help="CSV output path")
    return parser


def _gen_spec_from(ns, parser, level=None) -> GenSpec:
    lvl = level if level is not None else ns.level
    if lvl is None:
        parser.error("a problem source is required: --dir or --level")
    try:
        return GenSpec(level=lvl, seed=ns.seed, jump_lo=ns.jump_lo,
                       jump_hi=ns.jump_hi, coupling_scale=ns.coupling_scale,
                       base_cells=ns.base_cells)
    except RejectedInputError as exc:
        parser.error(str(exc))


def _params_from(ns, parser) -> PrecondParams:
    q_choice = "diag_mp" if ns.q == "diag-mp" else "identity"
    try:
        return PrecondParams(
            gamma=ns.gamma, alpha=ns.alpha, q_choice=q_choice,
            droptol_a22=ns.droptol_a22, droptol_s=ns.droptol_s,
            inner_gmres_tol=ns.inner_tol, inner_gmres_maxit=ns.inner_maxit,
            pcg_tol=0.1, pcg_maxit=ns.pcg_maxit,
        )
    except RejectedInputError as exc:
        parser.error(str(exc))


def parse_args(argv) -> RunConfig:
    """Parse an argv list into a RunConfig; argparse errors exit nonzero."""
    parser = _build_parser()
    ns = parser.parse_args(argv)
    cmd = ns.command

    if cmd == "gen":
        return RunConfig(command="gen", gen_spec=_gen_spec_from(ns, parser),
                         out=ns.out, seed=ns.seed, base_cells=ns.base_cells,
                         jump_lo=ns.jump_lo, jump_hi=ns.jump_hi,
                         coupling_scale=ns.coupling_scale)

    if cmd == "solve":
        if ns.dir is not None and ns.level is not None:
            parser.error("give either --dir or --level, not both")
        gen_spec = None if ns.dir is not None else _gen_spec_from(ns, parser)
        return RunConfig(command="solve", gen_spec=gen_spec, mtx_dir=ns.dir,
                         params=_params_from(ns, parser), outer_tol=ns.tol,
                         outer_maxit=ns.maxit, seed=ns.seed,
                         base_cells=ns.base_cells)

    if cmd == "spectrum":
        if ns.dir is not None and ns.level is not None:
            parser.error("give either --dir or --level, not both")
        gen_spec = None if ns.dir is not None else _gen_spec_from(ns, parser)
        try:
            params = PrecondParams(gamma=ns.gamma, alpha=ns.alpha)
        except RejectedInputError as exc:
            parser.error(str(exc))
        return RunConfig(command="spectrum", gen_spec=gen_spec, mtx_dir=ns.dir,
                         params=params, out=ns.out, report_out=ns.report,
                         seed=ns.seed, base_cells=ns.base_cells)

    if cmd == "bench":
        if not ns.gamma or not ns.levels:
            parser.error("bench needs nonempty --gamma and --levels lists")
        for g in ns.gamma:
            if g <= 0:
                parser.error("gamma values must be positive")
        try:
            return RunConfig(command="bench", gammas=ns.gamma, levels=ns.levels,
                             reps=ns.reps, outer_tol=ns.tol, outer_maxit=ns.maxit,
                             out=ns.out, seed=ns.seed, base_cells=ns.base_cells,
                             jump_lo=ns.jump_lo, jump_hi=ns.jump_hi,
                             coupling_scale=ns.coupling_scale)
        except RejectedInputError as exc:
            parser.error(str(exc))

    parser.error(f"unknown command {cmd!r}")


def _load_problem(cfg: RunConfig) -> BlockSystem:
    if cfg.mtx_dir is not None:
        system, _ = load_system(cfg.mtx_dir)
        return system
    return generate(cfg.gen_spec)


# -- bench -------------------------------------------------------------------

def _bench_cell(cfg: RunConfig, level: int, gamma: float) -> dict:
    spec = GenSpec(level=level, seed=cfg.seed, jump_lo=cfg.jump_lo,
                   jump_hi=cfg.jump_hi, coupling_scale=cfg.coupling_scale,
                   base_cells=cfg.base_cells)
    system = generate(spec)
    params = PrecondParams(gamma=gamma)
    factors = build_inner_factors(system, params)
    plain = AugmentedOperator.plain(system)
    iters, inners, pcgs, errs, walls = [], [], [], [], []
    all_converged = True
    for rep in range(cfg.reps):
        ustar = random_solution(cfg.seed, system.total, rep)
        b = plain.apply(ustar)
        _, report = solve(system, params, b, u_ref=ustar, tol=cfg.outer_tol,
                          maxit=cfg.outer_maxit, factors=factors)
        iters.append(report.outer_iters)
        inners.append(report.iter_in)
        pcgs.append(report.iter_pcg)
        errs.append(report.err)
        walls.append(report.wall_seconds)
        all_converged &= report.converged
    return {
        "level": level,
        "size": system.total,
        "gamma": gamma,
        "alpha": params.alpha,
        "iter": int(round(float(np.mean(iters)))),
        "cpu_s": float(np.mean(walls)),
        "err": float(np.mean(errs)),
        "iter_in": int(round(float(np.mean(inners)))),
        "iter_pcg": int(round(float(np.mean(pcgs)))),
        "converged": all_converged,
    }


_BENCH_COLUMNS = ("level", "size", "gamma", "alpha", "iter", "cpu_s", "err",
                  "iter_in", "iter_pcg", "converged")


def _format_row(row: dict) -> dict:
    return {
        "level": str(row["level"]),
        "size": str(row["size"]),
        "gamma": f"{row['gamma']:g}",
        "alpha": f"{row['alpha']:g}",
        "iter": str(row["iter"]),
        "cpu_s": f"{row['cpu_s']:.3f}",
        "err": f"{row['err']:.4e}",
        "iter_in": str(row["iter_in"]),
        "iter_pcg": str(row["iter_pcg"]),
        "converged": "yes" if row["converged"] else "NO",
    }


def run_bench(cfg: RunConfig, stream=None) -> tuple[list[dict], bool]:
    """Run the (level, gamma) sweep; returns (rows, all_converged).

    The text table and the CSV are rendered from the same formatted strings,
    so they carry identical numbers.
    """
    stream = stream or sys.stdout
    cells = [(level, gamma) for level in cfg.levels for gamma in cfg.gammas]
    workers = max(1, int(os.environ.get("AL3_THREADS", "1")))
    if workers > 1 and len(cells) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda lg: _bench_cell(cfg, *lg), cells))
    else:
        rows = [_bench_cell(cfg, level, gamma) for level, gamma in cells]

    formatted = [_format_row(r) for r in rows]
    widths = {c: max(len(c), *(len(f[c]) for f in formatted)) for c in _BENCH_COLUMNS}
    header = "  ".join(c.rjust(widths[c]) for c in _BENCH_COLUMNS)
    print(header, file=stream)
    print("-" * len(header), file=stream)
    for f in formatted:
        print("  ".join(f[c].rjust(widths[c]) for c in _BENCH_COLUMNS), file=stream)

    if cfg.out is not None:
        with open(cfg.out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=_BENCH_COLUMNS)
            writer.writeheader()
            for f in formatted:
                writer.writerow(f)
    all_converged = all(r["converged"] for r in rows)
    return rows, all_converged


# -- other commands ------------------------------------------------------------

def _run_gen(cfg: RunConfig) -> int:
    system = generate(cfg.gen_spec)
    extra = {
        "level": cfg.gen_spec.level,
        "seed": cfg.gen_spec.seed,
        "base_cells": cfg.gen_spec.base_cells,
        "jump_lo": cfg.gen_spec.jump_lo,
        "jump_hi": cfg.gen_spec.jump_hi,
        "coupling_scale": ("auto" if cfg.gen_spec.coupling_scale is None
                           else cfg.gen_spec.coupling_scale),
    }
    save_system(system, cfg.out, extra)
    print(f"wrote {system.n}+{system.m}+{system.p} system to {cfg.out}")
    return 0


def _run_solve(cfg: RunConfig) -> int:
    system = _load_problem(cfg)
    ustar = random_solution(cfg.seed, system.total, 0)
    b = AugmentedOperator.plain(system).apply(ustar)
    _, report = solve(system, cfg.params, b, u_ref=ustar,
                      tol=cfg.outer_tol, maxit=cfg.outer_maxit)
    print(f"size={system.total} gamma={cfg.params.gamma:g} alpha={cfg.params.alpha:g}")
    print(f"iter={report.outer_iters} cpu={report.wall_seconds:.3f}s "
          f"err={report.err:.4e} iter_in={report.iter_in} iter_pcg={report.iter_pcg} "
          f"converged={'yes' if report.converged else 'NO'}")
    return 0 if report.converged else 1


def _run_spectrum(cfg: RunConfig) -> int:
    system = _load_problem(cfg)
    spectrum = compute_spectrum(system, cfg.params)
    with open(cfg.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["re", "im"])
        for lam in spectrum.eigenvalues:
            writer.writerow([f"{lam.real:.16e}", f"{lam.imag:.16e}"])
    report = {
        "size": system.total,
        "gamma": cfg.params.gamma,
        "alpha": cfg.params.alpha,
        "max_imag": spectrum.max_imag,
        "cluster_fractions": {f"{d:g}": frac
                              for d, frac in cluster_stats(spectrum, CLUSTER_DELTAS)},
        "branches": branch_counts(system, cfg.params),
    }
    if system.p:
        bounds = theorem_bounds(system, cfg.params)
        lam = spectrum.eigenvalues
        report["bounds"] = {
            "xi": bounds.xi,
            "norm_b": bounds.norm_b,
            "lower": bounds.lower,
            "upper": bounds.upper,
            "min_re": float(lam.real.min()),
            "max_re": float(lam.real.max()),
            "lower_holds": bool(lam.real.min() >= bounds.lower - 1e-10),
            "upper_holds": bool(lam.real.max() < bounds.upper),
        }
    text = json.dumps(report, indent=2)
    print(text)
    if cfg.report_out is not None:
        Path(cfg.report_out).write_text(text + "\n", encoding="utf-8")
    return 0


def _run_bench_cmd(cfg: RunConfig) -> int:
    _, ok = run_bench(cfg)
    return 0 if ok else 1


def main(argv=None) -> int:
    cfg = parse_args(sys.argv[1:] if argv is None else argv)
    try:
        if cfg.command == "gen":
            return _run_gen(cfg)
        if cfg.command == "solve":
            return _run_solve(cfg)
        if cfg.command == "spectrum":
            return _run_spectrum(cfg)
        if cfg.command == "bench":
            return _run_bench_cmd(cfg)
    except (Al3Error, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
