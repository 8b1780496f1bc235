"""Command-line surface: eig, fiber classify, solve, thresholds, sweep,
verify.

Every command reads a scenario config file; outputs land in the scenario's
output directory (or --out).  The exit code is nonzero only when `verify`
reports a failing check.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .grid import ProblemData, load_grid_function, write_field_csv
from .eigen import principal_eig_omega, principal_eig_full, well_convergence_sweep
from .fibering import fibering_coeffs, stationary_points
from .solver import minimize_on_branch
from .thresholds import compute_thresholds, regime_classify
from .scenario import Scenario, load_scenario, run_scenario, run_verify
from . import report as report_io
from .report import to_jsonable


def _prepare(args) -> tuple[Scenario, Path]:
    scen = load_scenario(args.config)
    out = Path(args.out) if getattr(args, "out", None) else Path(scen.outdir)
    out.mkdir(parents=True, exist_ok=True)
    return scen, out


def cmd_eig(args) -> int:
    scen, out = _prepare(args)
    grid = scen.build_grid()
    fields = scen.build_fields(grid)
    omega = principal_eig_omega(fields, grid)
    lam1 = omega.eigenvalue
    base = scen.problem(fields, lambda1=lam1)
    full = principal_eig_full(base)
    payload = {
        "well_restricted": omega.to_json_dict(),
        "full_box": full.to_json_dict(),
        "lambda_resolved": base.lam,
    }
    print(json.dumps(to_jsonable(payload), sort_keys=True, indent=2))
    if args.mu_sweep:
        mus = sorted(float(m) for m in args.mu_sweep.replace(",", " ").split())
        table = well_convergence_sweep(base, mus)
        report_io.write_csv(
            out / "eigen_sweep.csv",
            ["mu", "lambda_tilde", "l2_gap", "iterations", "residual"],
            [[r["mu"], r["lambda_tilde"], r["l2_gap"], r["iterations"], r["residual"]] for r in table],
        )
        if scen.figures:
            report_io.render_eigen_figure(out / "eigen_sweep.png", table, lam1)
        print(f"wrote {out / 'eigen_sweep.csv'}")
    return 0


def cmd_fiber(args) -> int:
    scen, _ = _prepare(args)
    if args.action != "classify":
        raise SystemExit(f"unknown fiber action {args.action!r}")
    u = load_grid_function(args.input)
    fields = scen.build_fields(u.grid)
    lam1 = principal_eig_omega(fields, u.grid).eigenvalue
    problem = ProblemData(
        grid=u.grid, fields=fields, a=scen.a, p=scen.p,
        lam=scen.resolve_lambda(scen.lam, lam1), mu=scen.mu,
    )
    cls = stationary_points(fibering_coeffs(u, problem))
    print(json.dumps(to_jsonable(cls.to_json_dict()), sort_keys=True, indent=2))
    return 0


def cmd_solve(args) -> int:
    scen, out = _prepare(args)
    grid = scen.build_grid()
    fields = scen.build_fields(grid)
    lam1 = principal_eig_omega(fields, grid).eigenvalue
    problem = scen.problem(fields, lambda1=lam1)
    u_init = None
    seeds = None
    if args.seed_name == "auto":
        pass
    else:
        from .solver import default_seeds

        seeds = [
            (name, fn)
            for name, fn in default_seeds(problem, args.branch, grid.interior_mask)
            if name == args.seed_name
        ]
        if not seeds:
            raise SystemExit(f"unknown seed name {args.seed_name!r}")
    report = minimize_on_branch(
        problem, args.branch, u_init=u_init, settings=scen.solver, seeds=seeds
    )
    report_io.write_json(out / f"solve_{args.branch}.json", report.to_json_dict())
    write_field_csv(out / f"u_{args.branch}.csv", grid, {"u": report.solution.values})
    if scen.figures:
        report_io.render_solution_figure(
            out / f"u_{args.branch}.png", grid, {args.branch: report.solution.values}
        )
    print(json.dumps(to_jsonable(report.to_json_dict()), sort_keys=True, indent=2))
    return 0


def cmd_thresholds(args) -> int:
    scen, out = _prepare(args)
    grid = scen.build_grid()
    fields = scen.build_fields(grid)
    lam1 = principal_eig_omega(fields, grid).eigenvalue
    problem = scen.problem(fields, lambda1=lam1)
    budget = args.budget if args.budget else scen.thresholds_budget
    rng = np.random.default_rng(scen.seed)
    rep = compute_thresholds(problem, budget=budget, rng=rng)
    tags = regime_classify(problem, rep)
    payload = {
        "scenario": scen.name,
        "seed": scen.seed,
        **rep.to_json_dict(),
        "regimes": tags.to_json_dict(),
    }
    report_io.write_json(out / "thresholds.json", payload)
    print(json.dumps(to_jsonable(payload), sort_keys=True, indent=2))
    return 0


def cmd_sweep(args) -> int:
    scen, out = _prepare(args)
    result = run_scenario(scen, outdir=out)
    n_ok = sum(
        1
        for r in result.rows
        for b in ("minus", "plus")
        if r.get(f"{b}_converged")
    )
    print(f"{len(result.rows)} rows, {n_ok} converged branch solves -> {result.outdir}")
    return 0


def cmd_verify(args) -> int:
    scen, out = _prepare(args)
    overrides = {}
    for item in args.override or []:
        name, _, val = item.partition("=")
        if not val:
            raise SystemExit(f"override must look like name=tolerance, got {item!r}")
        overrides[name] = float(val)
    rep = run_verify(scen, outdir=out, tolerance_overrides=overrides)
    for check in rep.checks:
        status = "pass" if check.passed else "FAIL"
        print(f"[{status}] {check.name}: observed {check.observed:.3e} "
              f"(tolerance {check.tolerance:.1e}) {check.detail}")
    print("verify:", "pass" if rep.passed else "FAIL")
    return 0 if rep.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="steepwell",
        description="Nehari-branch solver suite for the indefinite Kirchhoff well problem",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_eig = sub.add_parser("eig", help="principal eigenpairs; optional mu sweep")
    p_eig.add_argument("--config", required=True)
    p_eig.add_argument("--out")
    p_eig.add_argument("--mu-sweep", help="comma/space separated mu values")
    p_eig.set_defaults(fn=cmd_eig)

    p_fib = sub.add_parser("fiber", help="fibering-map tools")
    p_fib.add_argument("action", choices=["classify"])
    p_fib.add_argument("--config", required=True)
    p_fib.add_argument("--input", required=True, help="flat CSV of a stored function")
    p_fib.set_defaults(fn=cmd_fiber)

    p_solve = sub.add_parser("solve", help="minimize on one Nehari branch")
    p_solve.add_argument("--config", required=True)
    p_solve.add_argument("--branch", choices=["minus", "plus"], required=True)
    p_solve.add_argument("--seed", dest="seed_name", default="auto",
                         help="initializer name: auto, q_bump, phi_omega, phi_mu, ground_state")
    p_solve.add_argument("--out")
    p_solve.set_defaults(fn=cmd_solve)

    p_thr = sub.add_parser("thresholds", help="estimate the regime constants")
    p_thr.add_argument("--config", required=True)
    p_thr.add_argument("--budget", type=int, default=0)
    p_thr.add_argument("--out")
    p_thr.set_defaults(fn=cmd_thresholds)

    p_sweep = sub.add_parser("sweep", help="run the scenario parameter sweep")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_ver = sub.add_parser("verify", help="run the property suite")
    p_ver.add_argument("--config", required=True)
    p_ver.add_argument("--out")
    p_ver.add_argument("--override", action="append",
                       help="tolerance override, e.g. gradient_fd=1e-2")
    p_ver.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
