"""Scenario configuration, parameter sweeps, the bifurcation table and the
property-verification suite.

A scenario is a flat INI file (key = value, one section per concern).  The
linear coupling is expressed as a multiple of the well-restricted principal
eigenvalue by default, so regime windows stay put when the grid resolution
changes; absolute mode is available.  One integer seed recorded in every
output drives all stochastic sampling.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .grid import (
    CoefficientFields,
    Grid,
    GridFunction,
    ProblemData,
    build_grid,
    integrate,
    gradient_dot,
    apply_laplacian,
    make_well_fields,
    write_field_csv,
)
from .functionals import (
    directional_derivative,
    energy,
    energy_gradient,
    mu_norm_sq,
    quad_inner,
    weighted_mass,
)
from .eigen import principal_eig_full, principal_eig_omega
from .fibering import (
    BranchNotFoundError,
    FiberingCoefficients,
    FiberingError,
    degenerate_point,
    fibering_coeffs,
    h_prime,
    h_second,
    nehari_scaling,
)
from .solver import SolverSettings, minimize_on_branch
from .thresholds import (
    ThresholdReport,
    compute_thresholds,
    random_sine_field,
    regime_classify,
)
from . import report as report_io


class ConfigError(ValueError):
    """Malformed or inconsistent scenario configuration."""


@dataclass
class Scenario:
    name: str = "scenario"
    seed: int = 12345
    dim: int = 1
    extents: tuple = ((-2.0, 2.0),)
    points: tuple = (401,)
    omega_radius: float = 1.0
    ramp_power: float = 2.0
    f_spec: str = "constant 1.0"
    q_spec: str = "radial_poly 1 0 -2"
    a: float = 0.5
    p: float = 5.0
    mu: float = 1e4
    lam: float = 0.5
    lambda_mode: str = "multiple"  # or "absolute"
    sweep_a: tuple = ()
    sweep_lambda: tuple = ()
    sweep_mu: tuple = ()
    sweep_p: tuple = ()
    branches: tuple = ("minus", "plus")
    solver: SolverSettings = dc_field(default_factory=SolverSettings)
    thresholds_budget: int = 800
    outdir: str = "out"
    figures: bool = True
    meta: dict | None = None  # recorded tail-growth constants, never validated

    def build_grid(self) -> Grid:
        return build_grid(self.dim, self.extents, list(self.points))

    def build_fields(self, grid: Grid | None = None) -> CoefficientFields:
        grid = grid or self.build_grid()
        return make_well_fields(
            grid, self.omega_radius, self.ramp_power, self.f_spec, self.q_spec
        )

    def problem(
        self,
        fields: CoefficientFields,
        a: float | None = None,
        p: float | None = None,
        mu: float | None = None,
        lam_abs: float | None = None,
        lambda1: float | None = None,
    ) -> ProblemData:
        if lam_abs is None:
            lam_abs = self.resolve_lambda(self.lam, lambda1)
        return ProblemData(
            grid=fields.grid,
            fields=fields,
            a=self.a if a is None else a,
            p=self.p if p is None else p,
            lam=lam_abs,
            mu=self.mu if mu is None else mu,
            meta=self.meta,
        )

    def resolve_lambda(self, value: float, lambda1: float | None) -> float:
        if self.lambda_mode == "absolute":
            return float(value)
        if lambda1 is None:
            raise ConfigError("lambda multiples need lambda1; compute it first")
        return float(value) * lambda1


def _parse_floats(text: str) -> list[float]:
    toks = text.replace(",", " ").split()
    try:
        return [float(t) for t in toks]
    except ValueError as exc:
        raise ConfigError(f"expected numbers, got {text!r}") from exc


def load_scenario(path) -> Scenario:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = cp.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path}")
    scen = Scenario()
    if cp.has_section("scenario"):
        scen.name = cp.get("scenario", "name", fallback=scen.name)
        scen.seed = cp.getint("scenario", "seed", fallback=scen.seed)
    if cp.has_section("grid"):
        scen.dim = cp.getint("grid", "dim", fallback=scen.dim)
        ext = _parse_floats(cp.get("grid", "extent", fallback="-2 2"))
        if len(ext) != 2 * scen.dim:
            raise ConfigError(f"extent needs {2 * scen.dim} numbers for dim={scen.dim}")
        scen.extents = tuple((ext[2 * k], ext[2 * k + 1]) for k in range(scen.dim))
        pts = _parse_floats(cp.get("grid", "points", fallback="401"))
        if len(pts) == 1:
            pts = pts * scen.dim
        if len(pts) != scen.dim:
            raise ConfigError(f"points needs 1 or {scen.dim} numbers")
        scen.points = tuple(int(p) for p in pts)
    if cp.has_section("fields"):
        scen.omega_radius = cp.getfloat("fields", "omega_radius", fallback=scen.omega_radius)
        scen.ramp_power = cp.getfloat("fields", "ramp_power", fallback=scen.ramp_power)
        scen.f_spec = cp.get("fields", "f", fallback=scen.f_spec)
        scen.q_spec = cp.get("fields", "q", fallback=scen.q_spec)
    if cp.has_section("problem"):
        scen.a = cp.getfloat("problem", "a", fallback=scen.a)
        scen.p = cp.getfloat("problem", "p", fallback=scen.p)
        scen.mu = cp.getfloat("problem", "mu", fallback=scen.mu)
        scen.lam = cp.getfloat("problem", "lambda", fallback=scen.lam)
        scen.lambda_mode = cp.get("problem", "lambda_mode", fallback=scen.lambda_mode)
        if scen.lambda_mode not in ("multiple", "absolute"):
            raise ConfigError("lambda_mode must be 'multiple' or 'absolute'")
        meta = {}
        for key in ("tail_growth_const", "tail_growth_radius"):
            if cp.has_option("problem", key):
                meta[key] = cp.getfloat("problem", key)
        scen.meta = meta or None
    if cp.has_section("sweep"):
        scen.sweep_a = tuple(_parse_floats(cp.get("sweep", "a", fallback=str(scen.a))))
        scen.sweep_lambda = tuple(
            _parse_floats(cp.get("sweep", "lambda", fallback=str(scen.lam)))
        )
        scen.sweep_mu = tuple(_parse_floats(cp.get("sweep", "mu", fallback=str(scen.mu))))
        scen.sweep_p = tuple(_parse_floats(cp.get("sweep", "p", fallback=str(scen.p))))
        branches = cp.get("sweep", "branches", fallback="minus plus").replace(",", " ").split()
        for b in branches:
            if b not in ("minus", "plus"):
                raise ConfigError(f"unknown branch {b!r}")
        scen.branches = tuple(branches)
    else:
        scen.sweep_a = (scen.a,)
        scen.sweep_lambda = (scen.lam,)
        scen.sweep_mu = (scen.mu,)
        scen.sweep_p = (scen.p,)
    for name, axis in (
        ("a", scen.sweep_a),
        ("lambda", scen.sweep_lambda),
        ("mu", scen.sweep_mu),
        ("p", scen.sweep_p),
    ):
        if len(axis) == 0:
            raise ConfigError(f"sweep axis {name!r} is empty")
    if cp.has_section("solver"):
        scen.solver = SolverSettings(
            tol_grad=cp.getfloat("solver", "tol_grad", fallback=1e-6),
            tol_nehari=cp.getfloat("solver", "tol_nehari", fallback=1e-9),
            max_iter=cp.getint("solver", "max_iter", fallback=50_000),
        )
    if cp.has_section("thresholds"):
        scen.thresholds_budget = cp.getint("thresholds", "budget", fallback=800)
    if cp.has_section("output"):
        scen.outdir = cp.get("output", "dir", fallback=scen.outdir)
        scen.figures = cp.getboolean("output", "figures", fallback=scen.figures)
    return scen


# ---------------------------------------------------------------------------
# sweep runner
# ---------------------------------------------------------------------------

ROW_COLUMNS = [
    "row", "seed", "a", "lam", "lam_multiple", "mu", "p",
    "lambda_tilde", "k_mu", "tags",
]
BRANCH_COLUMNS = [
    "converged", "J", "munorm", "grad_residual", "nehari_residual",
    "positivity_min", "iterations", "seed", "note",
]


@dataclass
class SweepResult:
    rows: list[dict]
    lambda1: float
    thresholds: ThresholdReport
    outdir: Path


def run_scenario(scenario: Scenario, outdir=None) -> SweepResult:
    """Run the full parameter sweep; one row per (a, lambda, mu, p) grid
    point.  Per-row failures are recorded in-row and never abort the sweep."""
    out = Path(outdir if outdir is not None else scenario.outdir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(scenario.seed)
    grid = scenario.build_grid()
    fields = scenario.build_fields(grid)
    lam1 = principal_eig_omega(fields, grid).eigenvalue

    base_problem = scenario.problem(fields, lambda1=lam1)
    thresholds = compute_thresholds(
        base_problem, budget=scenario.thresholds_budget, rng=rng
    )

    lambda_tilde_cache: dict[float, float] = {}

    def lam_tilde(mu: float) -> float:
        if mu not in lambda_tilde_cache:
            prob = ProblemData(grid=grid, fields=fields, a=base_problem.a,
                               p=base_problem.p, lam=base_problem.lam, mu=mu)
            lambda_tilde_cache[mu] = principal_eig_full(prob).eigenvalue
        return lambda_tilde_cache[mu]

    write_field_csv(
        out / "fields.csv",
        grid,
        {"V": fields.V.values, "f": fields.f.values, "Q": fields.Q.values},
    )

    rows = []
    profiles: dict[str, np.ndarray] = {}
    idx = 0
    for p in scenario.sweep_p or (scenario.p,):
        for mu in scenario.sweep_mu or (scenario.mu,):
            for a in scenario.sweep_a or (scenario.a,):
                for lam_val in scenario.sweep_lambda or (scenario.lam,):
                    lam_abs = scenario.resolve_lambda(lam_val, lam1)
                    row = {
                        "row": idx,
                        "seed": scenario.seed,
                        "a": a,
                        "lam": lam_abs,
                        "lam_multiple": lam_abs / lam1,
                        "mu": mu,
                        "p": p,
                    }
                    try:
                        problem = ProblemData(
                            grid=grid, fields=fields, a=a, p=p, lam=lam_abs, mu=mu
                        )
                        lt = lam_tilde(mu)
                        row["lambda_tilde"] = lt
                        row["k_mu"] = (
                            ((lt - lam_abs) / lt) ** (1.0 / (p - 2))
                            if lam_abs < lt
                            else float("nan")
                        )
                        tags = regime_classify(problem, thresholds)
                        row["tags"] = "|".join(tags.tags)
                        for branch in ("minus", "plus"):
                            prefix = f"{branch}_"
                            if branch not in scenario.branches:
                                _blank_branch(row, prefix, "not requested")
                                continue
                            try:
                                rep = minimize_on_branch(
                                    problem, branch, settings=scenario.solver
                                )
                                row[prefix + "converged"] = rep.converged
                                row[prefix + "J"] = rep.energy.J
                                row[prefix + "munorm"] = math.sqrt(
                                    max(rep.energy.munorm2, 0.0)
                                )
                                row[prefix + "grad_residual"] = rep.grad_residual
                                row[prefix + "nehari_residual"] = rep.nehari_residual
                                row[prefix + "positivity_min"] = rep.positivity_min
                                row[prefix + "iterations"] = rep.iterations
                                row[prefix + "seed"] = rep.seed_name
                                row[prefix + "note"] = rep.message
                                if rep.converged:
                                    write_field_csv(
                                        out / f"u_{idx}_{branch}.csv",
                                        grid,
                                        {"u": rep.solution.values},
                                    )
                                    if len(profiles) < 8:
                                        profiles[f"row {idx} {branch}"] = rep.solution.values
                            except (BranchNotFoundError, FiberingError) as exc:
                                _blank_branch(row, prefix, str(exc))
                    except Exception as exc:  # recorded, never aborts the sweep
                        row["error"] = f"{type(exc).__name__}: {exc}"
                        row.setdefault("lambda_tilde", float("nan"))
                        row.setdefault("k_mu", float("nan"))
                        row.setdefault("tags", "error")
                        for branch in ("minus", "plus"):
                            _blank_branch(row, f"{branch}_", "row failed")
                    row.setdefault("error", "")
                    rows.append(row)
                    idx += 1

    header = ROW_COLUMNS + [f"{b}_{c}" for b in ("minus", "plus") for c in BRANCH_COLUMNS] + ["error"]
    report_io.write_csv(
        out / "rows.csv", header, [[r.get(c, "") for c in header] for r in rows]
    )
    report_io.write_json(
        out / "thresholds.json",
        {"scenario": scenario.name, "seed": scenario.seed, **thresholds.to_json_dict()},
    )
    bif_rows = bifurcation_rows(rows)
    report_io.write_csv(
        out / "bifurcation.csv",
        ["lam", "minus_J", "plus_J", "minus_munorm", "plus_munorm"],
        bif_rows,
    )
    if scenario.figures:
        report_io.render_bifurcation_figure(out / "bifurcation.png", rows, lam1)
        if profiles:
            report_io.render_solution_figure(out / "solutions.png", grid, profiles)
    return SweepResult(rows=rows, lambda1=lam1, thresholds=thresholds, outdir=out)


def _blank_branch(row: dict, prefix: str, note: str) -> None:
    row[prefix + "converged"] = False
    for c in ("J", "munorm", "grad_residual", "nehari_residual", "positivity_min"):
        row[prefix + c] = float("nan")
    row[prefix + "iterations"] = 0
    row[prefix + "seed"] = ""
    row[prefix + "note"] = note


def bifurcation_rows(rows: list[dict]) -> list[list]:
    """The (lambda, branch energies) view of a sweep, for plotting."""
    out = []
    for r in rows:
        out.append(
            [
                r["lam"],
                r.get("minus_J", float("nan")),
                r.get("plus_J", float("nan")),
                r.get("minus_munorm", float("nan")),
                r.get("plus_munorm", float("nan")),
            ]
        )
    return out


def bifurcation_table(scenario: Scenario, outdir=None) -> list[list]:
    result = run_scenario(scenario, outdir=outdir)
    return bifurcation_rows(result.rows)


# ---------------------------------------------------------------------------
# verification suite
# ---------------------------------------------------------------------------

@dataclass
class VerifyCheck:
    name: str
    passed: bool
    observed: float
    tolerance: float
    detail: str = ""

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "observed": self.observed,
            "tolerance": self.tolerance,
            "detail": self.detail,
        }


@dataclass
class VerifyReport:
    checks: list[VerifyCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [c.to_json_dict() for c in self.checks],
        }


DEFAULT_TOLERANCES = {
    "quadrature_linearity": 1e-12,
    "green_identity": 1e-10,
    "gradient_fd": 1e-6,
    "energy_homogeneity": 1e-12,
    "fibering_triple_identity": 1e-10,
    "gap_inequality": 1e-10,
    "eigen_monotonicity": 1e-8,
    "double_root_oracle": 1e-9,
    "solution_certificate": 1e-6,
}


def verify_suite(
    scenario: Scenario,
    tolerance_overrides: dict | None = None,
    gradient_fn=None,
) -> VerifyReport:
    """Run the full property suite and report per-check pass/fail.

    ``gradient_fn`` substitutes the gradient used by the finite-difference
    check (fault-injection hook for testing the suite itself).
    """
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(tolerance_overrides or {})
    gradient_fn = gradient_fn or energy_gradient
    rng = np.random.default_rng(scenario.seed)
    grid = scenario.build_grid()
    fields = scenario.build_fields(grid)
    lam1 = principal_eig_omega(fields, grid).eigenvalue
    base = scenario.problem(fields, lambda1=lam1)
    checks: list[VerifyCheck] = []

    def sample() -> GridFunction:
        return random_sine_field(grid, rng)

    # quadrature linearity
    worst = 0.0
    for _ in range(10):
        u, v = sample(), sample()
        al, be = rng.normal(), rng.normal()
        combo = integrate(grid, al * u.values + be * v.values)
        parts = al * integrate(grid, u.values) + be * integrate(grid, v.values)
        scale = abs(combo) + abs(parts) + 1.0
        worst = max(worst, abs(combo - parts) / scale)
    checks.append(VerifyCheck("quadrature_linearity", worst <= tol["quadrature_linearity"], worst, tol["quadrature_linearity"]))

    # discrete Green identity
    worst = 0.0
    for _ in range(10):
        u, v = sample(), sample()
        lhs = integrate(grid, u.values * apply_laplacian(grid, v).values)
        rhs = integrate(grid, gradient_dot(grid, u, v))
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    checks.append(VerifyCheck("green_identity", worst <= tol["green_identity"], worst, tol["green_identity"]))

    # gradient vs central differences
    worst = 0.0
    for _ in range(20):
        u, v = sample(), sample()
        g = gradient_fn(u, base)
        inner = quad_inner(grid, g, v)
        for eps in (1e-4, 1e-5):
            fd = directional_derivative(u, v, base, eps=eps)
            worst = max(worst, abs(fd - inner) / (1.0 + abs(fd)))
    checks.append(VerifyCheck("gradient_fd", worst <= tol["gradient_fd"], worst, tol["gradient_fd"]))

    # homogeneity of the four energy pieces
    worst = 0.0
    for _ in range(5):
        u = sample()
        t = float(rng.uniform(0.5, 3.0))
        e1 = energy(u, base)
        e2 = energy(u.copy_with(t * u.values), base)
        for got, expect in (
            (e2.dnorm4, t**4 * e1.dnorm4),
            (e2.munorm2, t**2 * e1.munorm2),
            (e2.q_term, t**base.p * e1.q_term),
            (e2.f_term, t**2 * e1.f_term),
        ):
            worst = max(worst, abs(got - expect) / max(abs(expect), 1e-300))
    checks.append(VerifyCheck("energy_homogeneity", worst <= tol["energy_homogeneity"], worst, tol["energy_homogeneity"]))

    # triple identity at projected points
    lt = principal_eig_full(base).eigenvalue
    worst = 0.0
    detail = ""
    count = 0
    attempts = 0
    while count < 60 and attempts < 1000:
        attempts += 1
        p_s = [2.5, 3.0, 4.0, 5.0][attempts % 4]
        u = sample()
        prob = ProblemData(grid=grid, fields=fields, a=0.1, p=p_s,
                           lam=0.5 * lt, mu=base.mu)
        try:
            coeffs = fibering_coeffs(u, prob)
            if coeffs.C <= 0:
                continue
            a_s = _admissible_a(coeffs)
            prob = ProblemData(grid=grid, fields=fields, a=a_s, p=p_s,
                               lam=0.5 * lt, mu=base.mu)
            coeffs = fibering_coeffs(u, prob)
            t = nehari_scaling(coeffs, "minus")
        except (BranchNotFoundError, FiberingError):
            continue
        scaled = FiberingCoefficients(
            A=coeffs.A * t**4, B=coeffs.B * t**2, C=coeffs.C * t**p_s,
            p=p_s, a=a_s,
        )
        worst = max(worst, _triple_identity_spread(scaled))
        count += 1
    if count < 60:
        detail = f"only {count} admissible samples"
    checks.append(VerifyCheck("fibering_triple_identity", worst <= tol["fibering_triple_identity"] and count >= 60, worst, tol["fibering_triple_identity"], detail))

    # gap inequality at lam = 0.5 * lambda_tilde
    gap_prob = ProblemData(grid=grid, fields=fields, a=base.a, p=base.p,
                           lam=0.5 * lt, mu=base.mu)
    violations = 0
    worst = -math.inf
    for _ in range(200):
        u = sample()
        mun2 = mu_norm_sq(u, gap_prob)
        B = mun2 - gap_prob.lam * weighted_mass(u, fields.f)
        bound = (lt - gap_prob.lam) / lt * mun2 - tol["gap_inequality"] * mun2
        worst = max(worst, (bound - B) / max(mun2, 1e-300))
        if B < bound:
            violations += 1
    checks.append(VerifyCheck("gap_inequality", violations == 0, float(violations), 0.0, f"worst margin {worst:.2e}"))

    # eigenvalue monotonicity in the well depth
    lts = []
    for mu in (10.0, 100.0, 1000.0):
        prob = ProblemData(grid=grid, fields=fields, a=base.a, p=base.p, lam=base.lam, mu=mu)
        lts.append(principal_eig_full(prob).eigenvalue)
    mono = all(lts[i] <= lts[i + 1] + tol["eigen_monotonicity"] for i in range(len(lts) - 1))
    below = all(v < lam1 + tol["eigen_monotonicity"] for v in lts)
    checks.append(VerifyCheck("eigen_monotonicity", mono and below, max(lts) - lam1, tol["eigen_monotonicity"], f"values {lts}"))

    # degenerate double-root closed forms
    worst = 0.0
    exact = FiberingCoefficients(A=1.0, B=1.0, C=2.0, p=3.0, a=1.0)
    t_star, a_star = degenerate_point(exact)
    worst = max(worst, abs(t_star - 1.0), abs(a_star - 1.0))
    for _ in range(25):
        p_s = float(rng.uniform(2.2, 3.8))
        cf = FiberingCoefficients(
            A=float(rng.uniform(0.2, 5.0)), B=float(rng.uniform(0.2, 5.0)),
            C=float(rng.uniform(0.2, 5.0)), p=p_s, a=0.0,
        )
        t_s, a_s = degenerate_point(cf)
        at_star = FiberingCoefficients(A=cf.A, B=cf.B, C=cf.C, p=p_s, a=a_s)
        worst = max(worst, abs(h_prime(at_star, t_s)), 0.1 * abs(h_second(at_star, t_s)))
    checks.append(VerifyCheck("double_root_oracle", worst <= tol["double_root_oracle"], worst, tol["double_root_oracle"]))

    # one certified solve
    try:
        cert_prob = ProblemData(grid=grid, fields=fields, a=base.a, p=base.p,
                                lam=0.5 * lam1, mu=base.mu)
        rep = minimize_on_branch(cert_prob, "minus", settings=scenario.solver)
        ok = rep.converged
        observed = rep.grad_residual
        detail = f"J={rep.energy.J:.6g} nehari={rep.nehari_residual:.2e} pos={rep.positivity_min:.3g}"
    except (BranchNotFoundError, FiberingError) as exc:
        ok, observed, detail = False, float("nan"), str(exc)
    checks.append(VerifyCheck("solution_certificate", ok, observed, tol["solution_certificate"], detail))

    return VerifyReport(checks=checks)


def _admissible_a(coeffs: FiberingCoefficients) -> float:
    """A Kirchhoff coefficient for which the ray of u certainly carries a
    maximum stationary point (used by the property samplers)."""
    if coeffs.p > 4:
        return 0.3
    if coeffs.p == 4.0:
        return 0.5 * coeffs.C / coeffs.A
    _, a_star = degenerate_point(
        FiberingCoefficients(A=coeffs.A, B=coeffs.B, C=coeffs.C, p=coeffs.p, a=0.0)
    )
    return 0.5 * a_star


def _triple_identity_spread(c: FiberingCoefficients) -> float:
    e1 = -(c.p - 2) * c.B - c.a * (c.p - 4) * c.A
    e2 = 2 * c.a * c.A - (c.p - 2) * c.C
    e3 = -2 * c.B - (c.p - 4) * c.C
    vals = (e1, e2, e3)
    denom = max(abs(e1), abs(e2), abs(e3), 1e-300)
    return max(abs(x - y) for x in vals for y in vals) / denom


def run_verify(scenario: Scenario, outdir=None, tolerance_overrides=None) -> VerifyReport:
    out = Path(outdir if outdir is not None else scenario.outdir)
    rep = verify_suite(scenario, tolerance_overrides=tolerance_overrides)
    report_io.write_json(
        out / "report.json",
        {"scenario": scenario.name, "seed": scenario.seed, **rep.to_json_dict()},
    )
    return rep
