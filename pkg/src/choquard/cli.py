"""Command-line driver.

Subcommands:

    solve        one constrained minimisation; writes solution.json
    sweep-alpha  alpha ladder against the local limit; writes gamma_sweep.csv
    pohozaev     identity audit of a Dirichlet solution file; pohozaev.csv
    kernel-check oracle battery for the assembled kernel; kernel_check.csv

Each report also renders a figure next to its delimited output unless
figures are disabled.  Exit codes: 0 success, 1 usage/config error,
2 numerical non-convergence, 3 oracle-check failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from datetime import datetime, timezone

import numpy as np

from . import config as _cfg
from . import diagnostics as _diag
from . import energy as _en
from . import plots as _plots
from . import riesz as _riesz
from . import solver as _sv
from .geometry import Field, RadialDomain, RadialGrid, sphere_measure
from .potentials import parse_potential_spec

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_ORACLE = 3


def _load_config(args):
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            raise _cfg.ConfigError([f"cannot read config {args.config}: {exc}"])
        cfg, warns = _cfg.parse_config(text)
    else:
        cfg, warns = _cfg.RunConfig(), []
        errors, more = _cfg.validate_config(cfg)
        if errors:
            raise _cfg.ConfigError(errors)
        warns.extend(more)
    if args.set:
        cfg, more = _cfg.apply_overrides(cfg, args.set)
        warns.extend(more)
    if args.seed is not None:
        cfg, more = _cfg.apply_overrides(cfg, [f"solver.seed={args.seed}"])
        warns.extend(more)
    for w in warns:
        print(f"warning: {w}", file=sys.stderr)
    return cfg


def _out_path(cfg, args, name: str) -> str:
    directory = _cfg.resolve_out_dir(cfg, args.out)
    os.makedirs(directory, exist_ok=True)
    return os.path.join(directory, name)


def _figures_enabled(cfg, args) -> bool:
    return cfg.figures and not args.no_figures


def _timestamp() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def cmd_solve(cfg: _cfg.RunConfig, args) -> int:
    problem = cfg.make_problem()
    grid = cfg.make_grid()
    kernel = _riesz.assemble_kernel(grid, cfg.alpha)
    opts = cfg.make_solve_options()
    result = _sv.minimize_constrained(problem, grid, kernel, opts)
    residual = (_sv.pde_residual(result.v, problem, kernel)
                if result.v is not None else float("nan"))
    data = _sv.solution_to_dict(result, problem, grid, opts, timestamp=_timestamp())
    path = _out_path(cfg, args, "solution.json")
    _sv.write_solution(data, path)
    if _figures_enabled(cfg, args):
        _plots.solution_figure(
            grid.nodes, result.u.values,
            result.v.values if result.v is not None else None,
            data["meta"], _out_path(cfg, args, "solution.png"),
        )
    print(
        f"J={result.J!r} mu={result.mu!r} iterations={result.iterations} "
        f"grad_norm={result.grad_norm:.3e} residual={residual:.3e} "
        f"converged={result.converged}"
    )
    print(f"wrote {path}")
    return EXIT_OK if result.converged else EXIT_NUMERICAL


def _sweep_rows_parallel(problem, grid, alphas, opts, jobs):
    def one(alpha):
        prob_a = replace(problem, alpha=alpha)
        kern = _riesz.assemble_kernel(grid, alpha)
        res = _sv.minimize_constrained(prob_a, grid, kern, opts)
        if not res.converged:
            raise _sv.SolverError(f"sweep solve at alpha={alpha} did not converge")
        return res

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(one, alphas))
    local = _sv.solve_local(problem, grid, opts)
    if not local.converged:
        raise _sv.SolverError("local limit solve did not converge")
    u0 = _diag._nonneg_orientation(local.u)
    rows = []
    for alpha, res in zip(alphas, results):
        ua = _diag._nonneg_orientation(res.u)
        from .geometry import h1_norm
        rows.append(_diag.GammaSweepRow(alpha, res.J, local.J,
                                        h1_norm(ua - u0), res.mu))
    return rows, local


def cmd_sweep_alpha(cfg: _cfg.RunConfig, args) -> int:
    if cfg.domain != "annulus":
        print("error: sweep-alpha is formulated on annulus domains", file=sys.stderr)
        return EXIT_USAGE
    problem = cfg.make_problem()
    grid = cfg.make_grid()
    opts = cfg.make_solve_options()
    jobs = max(1, args.jobs)
    if jobs > 1 and not cfg.warm_start:
        rows, local = _sweep_rows_parallel(problem, grid, list(cfg.alphas), opts, jobs)
    else:
        if jobs > 1:
            print("note: warm-started sweeps run sequentially; use "
                  "--set sweep.warm_start=false to parallelise", file=sys.stderr)
        rows, local = _diag.gamma_sweep(problem, grid, cfg.alphas, opts,
                                        warm_start=cfg.warm_start)
    path = _out_path(cfg, args, "gamma_sweep.csv")
    _diag.write_gamma_csv(rows, path)
    if _figures_enabled(cfg, args):
        _plots.gamma_figure(rows, _out_path(cfg, args, "gamma_sweep.png"))
    print(f"J0={local.J!r}")
    for row in rows:
        print(f"alpha={row.alpha}: J_alpha={row.J_alpha!r} "
              f"|J-J0|={abs(row.J_alpha - row.J0):.6e} h1_dist={row.h1_dist:.6e}")
    print(f"wrote {path}")
    return EXIT_OK


def _grid_from_solution(data: dict) -> tuple[RadialGrid, _en.Problem]:
    meta = data["meta"]
    dom_meta = meta["domain"]
    domain = RadialDomain(dom_meta["kind"], dom_meta["a"], b=dom_meta["b"],
                          truncation_R=dom_meta["truncation_R"],
                          dimension=meta["N"])
    nodes = np.asarray(data["grid"]["nodes"], dtype=float)
    grid = _grid_from_nodes(domain, nodes)
    potential = parse_potential_spec(meta["V-spec"], (domain.a, domain.outer))
    problem = _en.Problem(domain, meta["bc"], potential, meta["p"], meta["alpha"])
    return grid, problem


def _grid_from_nodes(domain: RadialDomain, nodes: np.ndarray) -> RadialGrid:
    N = domain.dimension
    rl, rr = nodes[:-1], nodes[1:]
    h = rr - rl
    m0 = (rr**N - rl**N) / N
    m1 = (rr ** (N + 1) - rl ** (N + 1)) / (N + 1)
    weights = np.zeros(len(nodes))
    weights[:-1] += (rr * m0 - m1) / h
    weights[1:] += (m1 - rl * m0) / h
    return RadialGrid(domain, nodes, weights, m0, sphere_measure(N))


def cmd_pohozaev(args) -> int:
    data = _sv.load_solution(args.solution)
    grid, problem = _grid_from_solution(data)
    if problem.bc != _en.DIRICHLET:
        print("error: dirichlet-only: the identity audit assumes u = 0 on the "
              "boundary", file=sys.stderr)
        return EXIT_USAGE
    if data["v"] is None:
        print("error: solution file has no rescaled field (p = 1 run)",
              file=sys.stderr)
        return EXIT_USAGE
    v = Field(grid, np.asarray(data["v"]["values"], dtype=float))
    report = _diag.pohozaev_residual(v, problem)
    cfg = _cfg.RunConfig(dir=args.out or "")
    path = _out_path(cfg, args, "pohozaev.csv")
    _diag.write_pohozaev_csv(report, path)
    if not args.no_figures:
        _plots.pohozaev_figure(report, _out_path(cfg, args, "pohozaev.png"))
    print(f"grad_term={report.grad_term!r}")
    print(f"potential_term={report.potential_term!r}")
    print(f"drift_term={report.drift_term!r}")
    print(f"boundary_term={report.boundary_term!r}")
    print(f"residual={report.residual!r}")
    N = problem.domain.dimension
    if N >= 3:
        cls = _diag.classify_nonexistence(N, problem.alpha, problem.p)
        print(f"classification: {cls.label} (threshold p = {cls.threshold!r}); "
              f"{cls.note}")
    else:
        print("classification: threshold (N+alpha)/(N-2) undefined for N = 2")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_kernel_check(cfg: _cfg.RunConfig, args) -> int:
    from scipy import integrate as _si

    grid = cfg.make_grid()
    N = cfg.N
    alpha = cfg.alpha
    kernel = _riesz.assemble_kernel(grid, alpha)
    checks = []  # (name, deviation, tolerance, passed)
    rng = np.random.default_rng(cfg.seed)

    if N == 3:
        # assembled cell integrals against the elementary closed form
        const = _riesz.riesz_constant(3, alpha)

        def closed(r, s):
            if alpha == 1.0:
                return const * 2 * math.pi * math.log((r + s) / abs(r - s)) / (r * s)
            return const * 2 * math.pi * (
                (r + s) ** (alpha - 1) - abs(r - s) ** (alpha - 1)
            ) / ((alpha - 1) * r * s)

        n_nodes = len(grid.nodes)
        worst = 0.0
        for _ in range(50):
            i = int(rng.integers(0, n_nodes))
            j = int(rng.integers(0, n_nodes))
            if i == j:
                continue
            ri = grid.nodes[i]
            total = 0.0
            for lo_idx in (j - 1, j):
                if lo_idx < 0 or lo_idx >= n_nodes - 1:
                    continue
                lo, hi = grid.nodes[lo_idx], grid.nodes[lo_idx + 1]
                rising = lo_idx == j - 1

                def hat(s, _lo=lo, _hi=hi, _rising=rising):
                    lam = (s - _lo) / (_hi - _lo)
                    return lam if _rising else 1.0 - lam

                pts = [ri] if lo < ri < hi else None
                val, _ = _si.quad(
                    lambda s: closed(ri, s) * s**2 * hat(s), lo, hi,
                    epsabs=1e-15, epsrel=1e-12, limit=400, points=pts,
                )
                total += val
            if total != 0.0:
                worst = max(worst, abs(kernel.entries[i, j] - total) / abs(total))
        checks.append(("closed-form", worst, 1e-8, worst <= 1e-8))

        if alpha == 2.0:
            one = Field.constant(grid, 1.0)
            got = kernel.apply(one).values
            a_, b_ = grid.domain.a, grid.domain.outer
            exact = (grid.nodes**3 - a_**3) / (3 * grid.nodes) + (b_**2 - grid.nodes**2) / 2
            dev = float(np.max(np.abs(got - exact) / exact))
            checks.append(("newton-shell", dev, 1e-6, dev <= 1e-6))

    # Monte Carlo cross-check at three interior radii
    one = Field.constant(grid, 1.0)
    profile = kernel.apply(one).values
    lo_r, hi_r = grid.domain.a, grid.domain.outer
    worst_z = 0.0
    for frac in (0.25, 0.5, 0.75):
        target = lo_r + frac * (hi_r - lo_r)
        i = int(np.argmin(np.abs(grid.nodes - target)))
        est = _riesz.mc_oracle(one, alpha, float(grid.nodes[i]),
                               samples=4 * 10**5, seed=cfg.seed + i)
        if est.stderr > 0:
            worst_z = max(worst_z, abs(est.value - profile[i]) / est.stderr)
    checks.append(("monte-carlo", worst_z, 3.0, worst_z <= 3.0))

    # approximation of the identity along a default ladder
    ladder = [a for a in (0.4, 0.2, 0.1, 0.05) if a < N]
    small = _grid_small(grid.domain, min(cfg.n, 128), cfg)
    table = _riesz.identity_limit_table(small, Field.constant(small, 1.0), ladder)
    devs = [d for _, d in table]
    monotone = all(d2 < d1 for d1, d2 in zip(devs, devs[1:]))
    checks.append(("identity-limit", 0.0 if monotone else 1.0, 0.5, monotone))

    # comparison bound between two orders on random non-negative fields
    k_hi = _riesz.assemble_kernel(small, ladder[0])
    k_lo = _riesz.assemble_kernel(small, ladder[-1])
    bound = _riesz.comparison_constant(ladder[0], grid.domain.outer)
    worst_ratio = 0.0
    for _ in range(10):
        f = Field(small, rng.random(len(small.nodes)))
        worst_ratio = max(
            worst_ratio,
            _riesz.pairing(k_hi, f) / (bound * _riesz.pairing(k_lo, f)),
        )
    checks.append(("comparison-bound", worst_ratio, 1.0, worst_ratio <= 1.0))

    cfg_out = replace(cfg)
    lines = ["check,deviation,tolerance,pass"]
    for name, dev, tol, passed in checks:
        print(f"{name}: deviation={dev:.3e} tolerance={tol:.3e} "
              f"{'ok' if passed else 'FAIL'}")
        lines.append(f"{name},{dev!r},{tol!r},{str(passed).lower()}")
    path = _out_path(cfg_out, args, "kernel_check.csv")
    _diag._atomic_write_text("\n".join(lines) + "\n", path)
    if _figures_enabled(cfg, args):
        _plots.kernel_check_figure(checks, _out_path(cfg_out, args, "kernel_check.png"))
    print(f"wrote {path}")
    return EXIT_OK if all(c[3] for c in checks) else EXIT_ORACLE


def _grid_small(domain, n, cfg):
    from .geometry import build_grid

    return build_grid(domain, max(n, 16), cfg.grading, cfg.ratio)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="choquard",
        description="Radial ground states of the nonlocal Choquard equation "
                    "by constrained energy minimisation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", help="INI-style run configuration")
            p.add_argument("--set", action="append", default=[],
                           metavar="SECTION.KEY=VALUE",
                           help="override a config value (repeatable)")
            p.add_argument("--seed", type=int, default=None,
                           help="override solver.seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel workers for sweeps")

    p_solve = sub.add_parser("solve", help="run one constrained minimisation")
    common(p_solve)
    p_sweep = sub.add_parser("sweep-alpha", help="alpha ladder vs the local limit")
    common(p_sweep)
    p_poho = sub.add_parser("pohozaev", help="identity audit of a solution file")
    p_poho.add_argument("solution", help="solution JSON produced by solve")
    common(p_poho, needs_config=False)
    p_kc = sub.add_parser("kernel-check", help="kernel oracle battery")
    common(p_kc)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "pohozaev":
            return cmd_pohozaev(args)
        cfg = _load_config(args)
        if args.command == "solve":
            return cmd_solve(cfg, args)
        if args.command == "sweep-alpha":
            return cmd_sweep_alpha(cfg, args)
        if args.command == "kernel-check":
            return cmd_kernel_check(cfg, args)
        raise AssertionError(f"unhandled command {args.command}")
    except _cfg.ConfigError as exc:
        for msg in exc.messages:
            print(f"error: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except (_sv.SolverError, _diag.DiagnosticsError, _riesz.RieszError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, _sv.SolverError):
            return EXIT_NUMERICAL
        return EXIT_USAGE
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
