"""Constrained minimization of the energy on the Nehari branches.

The driver alternates projected-gradient descent with a certifying Newton
polish:

1. Descent phase: the raw gradient is preconditioned by the well operator
   (-Delta + mu V + I), the step is truncated to its positive part and then
   rescaled back onto the requested branch (ray maximum for 'minus', ray
   minimum for 'plus'), with Armijo backtracking on the energy.  The
   rescaling never changes the branch because only steps whose projection
   exists are accepted.
2. Polish phase: once descent can no longer certify an energy decrease in
   floating point (the decrease per step falls below the evaluation noise of
   J while the gradient is still above tolerance), a damped Newton iteration
   on the full first-variation finishes the job.  The Newton matrix is the
   sparse local part plus the nonlocal rank-one term, absorbed by a
   Sherman-Morrison solve; steps are accepted only if the sup-norm residual
   decreases.

Convergence is certified on the raw gradient field (sup norm), the Nehari
identity, branch sign of h''(1), and positivity over the well interior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import CoefficientFields, Grid, GridFunction, ProblemData, stiffness_csr
from .functionals import (
    EnergyBreakdown,
    dirichlet_norm_sq,
    energy,
    energy_gradient,
    q_power_term,
    weighted_mass,
)
from .fibering import (
    BranchNotFoundError,
    FiberingError,
    degenerate_point,
    fibering_coeffs,
    h_second,
    nehari_scaling,
    stationary_points,
)
from .eigen import principal_eig_full, principal_eig_omega


class SolverError(RuntimeError):
    """Unrecoverable solver failure (no admissible seed, collapsed steps)."""


@dataclass(frozen=True)
class SolverSettings:
    tol_grad: float = 1e-6
    tol_nehari: float = 1e-9
    max_iter: int = 50_000
    eta_init: float = 1.0
    eta_min: float = 1e-18
    eta_max: float = 1e6
    newton_max_steps: int = 60
    newton_every: int = 40  # descent iterations between polish attempts


@dataclass(eq=False)
class SolveReport:
    solution: GridFunction
    branch: str
    energy: EnergyBreakdown
    grad_residual: float
    nehari_residual: float
    positivity_min: float
    iterations: int
    converged: bool
    seed_name: str = ""
    message: str = ""

    def to_json_dict(self) -> dict:
        return {
            "branch": self.branch,
            "energy": self.energy.to_json_dict(),
            "grad_residual": self.grad_residual,
            "nehari_residual": self.nehari_residual,
            "positivity_min": self.positivity_min,
            "iterations": self.iterations,
            "converged": self.converged,
            "seed_name": self.seed_name,
            "message": self.message,
        }


@dataclass(eq=False)
class LimitGroundState:
    w: GridFunction
    alpha_infty: float
    identity_residual: float
    report: SolveReport | None = field(repr=False, default=None)


# ---------------------------------------------------------------------------
# seeds
# ---------------------------------------------------------------------------

def gaussian_bump_seed(problem: ProblemData, active: np.ndarray) -> GridFunction:
    """Positive bump centred at the strongest-Q well node (ties broken toward
    the well centre), zero off ``active``."""
    grid = problem.grid
    fields = problem.fields
    sel = fields.omega_mask & active
    if not sel.any():
        sel = active
    qv = np.where(sel, fields.Q.values, -np.inf)
    qmax = qv.max()
    tied = qv >= qmax - 1e-12 * (1.0 + abs(qmax))
    radius = np.maximum.reduce([np.abs(c) for c in grid.coords])
    radius = np.where(tied, radius, np.inf)
    center_flat = int(np.argmin(radius))
    center_idx = np.unravel_index(center_flat, grid.shape)
    center = [grid.axes[ax][center_idx[ax]] for ax in range(grid.dim)]
    width = 0.25 * min(
        min(hi - c0, c0 - lo) for (lo, hi), c0 in zip(grid.extents, center)
    )
    width = max(width, 2 * max(grid.spacing))
    d2 = sum((c - c0) ** 2 for c, c0 in zip(grid.coords, center))
    vals = np.exp(-d2 / (2 * width**2))
    vals[~active] = 0.0
    return GridFunction(grid, vals)


def default_seeds(problem: ProblemData, branch: str, active: np.ndarray):
    """Deterministic (name, function) seed stream for the multi-start."""
    def bump():
        return gaussian_bump_seed(problem, active)

    def phi_omega():
        phi = principal_eig_omega(problem.fields, problem.grid).eigenfunction
        vals = phi.values.copy()
        vals[~active] = 0.0
        return GridFunction(problem.grid, vals)

    def phi_mu():
        phi = principal_eig_full(problem).eigenfunction
        vals = phi.values.copy()
        vals[~active] = 0.0
        return GridFunction(problem.grid, vals)

    def ground_state():
        if not 2 < problem.p < 4:
            raise BranchNotFoundError("ground-state seed needs 2 < p < 4")
        eig = principal_eig_omega(problem.fields, problem.grid)
        if not 0 <= problem.lam < eig.eigenvalue:
            raise BranchNotFoundError("ground-state seed needs 0 <= lam < lambda1")
        gs = solve_limit_problem(problem.fields, problem.grid, problem.p, problem.lam)
        vals = gs.w.values.copy()
        vals[~active] = 0.0
        return GridFunction(problem.grid, vals)

    def quartic_witness():
        # ray maxima at p = 4 need a positive quartic indicator C - a A > 0;
        # when simple profiles fall short, ascend the quartic quotient over
        # well-supported functions (tails in the penalized region make
        # useless seeds at large mu)
        if abs(problem.p - 4.0) > 1e-12:
            raise BranchNotFoundError("quartic witness seed only applies at p = 4")
        from .thresholds import estimate_gamma0_witness

        best, u = estimate_gamma0_witness(
            problem.fields, problem.grid, budget=400,
            rng=np.random.default_rng(0),
            mask=active & problem.fields.omega_mask,
        )
        if u is None or best <= problem.a:
            raise BranchNotFoundError(
                f"no positive quartic indicator found: well-supported sup "
                f"estimate {best:.6g} <= a"
            )
        return u

    if branch == "minus":
        order = [("q_bump", bump), ("phi_omega", phi_omega), ("phi_mu", phi_mu),
                 ("ground_state", ground_state), ("quartic_witness", quartic_witness)]
    else:
        order = [("phi_mu", phi_mu), ("phi_omega", phi_omega),
                 ("ground_state", ground_state), ("q_bump", bump),
                 ("quartic_witness", quartic_witness)]
    for name, fn in order:
        yield name, fn


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

class _BranchOperators:
    """Sparse machinery over the active node set, with a preconditioner that
    tracks the current Kirchhoff diffusion coefficient."""

    def __init__(self, problem: ProblemData, active: np.ndarray):
        self.problem = problem
        self.active = active
        self.grid = problem.grid
        self.L = stiffness_csr(self.grid, active)
        self.muV = problem.mu * problem.fields.V.values[active]
        self._precond_coef = None
        self._precond_lu = None

    def precondition(self, gvals: np.ndarray, diffusion_coef: float) -> np.ndarray:
        if (
            self._precond_lu is None
            or not 0.7 <= diffusion_coef / self._precond_coef <= 1.4
        ):
            K = diffusion_coef * self.L + sp.diags(self.muV + 1.0)
            self._precond_lu = spla.splu(K.tocsc())
            self._precond_coef = diffusion_coef
        return self._precond_lu.solve(gvals)

    def newton_delta(self, u: GridFunction, gvals: np.ndarray) -> np.ndarray:
        """Solve H(u) delta = g over the active set.

        H = (a*dn2 + 1)(-Delta) + diag(mu V - (p-1) Q |u|^(p-2) - lam f)
            + 2a (Lu)(w Lu)^T, the last term via Sherman-Morrison.
        """
        pb = self.problem
        grid = self.grid
        act = self.active
        u_act = u.values[act]
        Lu = self.L @ u_act
        w_act = grid.quad_weights[act]
        dn2 = float(np.sum(w_act * u_act * Lu))
        diag = (
            self.muV
            - (pb.p - 1) * pb.fields.Q.values[act] * np.abs(u_act) ** (pb.p - 2)
            - pb.lam * pb.fields.f.values[act]
        )
        H = ((pb.a * dn2 + 1.0) * self.L + sp.diags(diag)).tocsc()
        lu = spla.splu(H)
        y = lu.solve(gvals)
        if pb.a == 0.0:
            return y
        c_vec = w_act * Lu
        z = lu.solve(Lu)
        denom = 1.0 + 2.0 * pb.a * float(c_vec @ z)
        if denom == 0.0:
            return y
        return y - (2.0 * pb.a * float(c_vec @ y) / denom) * z


# ---------------------------------------------------------------------------
# the branch minimizer
# ---------------------------------------------------------------------------

def _masked_gradient(u: GridFunction, problem: ProblemData, active: np.ndarray) -> np.ndarray:
    g = energy_gradient(u, problem).values
    g[~active] = 0.0
    return g


def _nehari_residual(u: GridFunction, problem: ProblemData) -> float:
    dn2 = dirichlet_norm_sq(u)
    mun2 = dn2 + problem.mu * weighted_mass(u, problem.fields.V)
    lhs = problem.a * dn2 * dn2 + mun2
    rhs = q_power_term(u, problem) + problem.lam * weighted_mass(u, problem.fields.f)
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return abs(lhs - rhs) / scale


def _certify(
    u: GridFunction,
    problem: ProblemData,
    branch: str,
    active: np.ndarray,
    iterations: int,
    seed_name: str,
    settings: SolverSettings,
    message: str = "",
) -> SolveReport:
    res = float(np.max(np.abs(_masked_gradient(u, problem, active))))
    neh = _nehari_residual(u, problem)
    omega_int = problem.fields.omega_interior_mask
    positivity = float(u.values[omega_int].min()) if omega_int.any() else float("nan")
    coeffs = fibering_coeffs(u, problem)
    h2 = h_second(coeffs, 1.0)
    branch_ok = (h2 < 0) if branch == "minus" else (h2 > 0)
    converged = (
        res <= settings.tol_grad
        and neh <= settings.tol_nehari
        and positivity > 0
        and branch_ok
    )
    if not message:
        if not branch_ok:
            message = f"second derivative sign {h2:+.3e} inconsistent with branch"
        elif res > settings.tol_grad:
            message = "gradient residual above tolerance"
        elif neh > settings.tol_nehari:
            message = "Nehari identity residual above tolerance"
        elif positivity <= 0:
            message = "solution not positive on the well interior"
    return SolveReport(
        solution=u,
        branch=branch,
        energy=energy(u, problem),
        grad_residual=res,
        nehari_residual=neh,
        positivity_min=positivity,
        iterations=iterations,
        converged=converged,
        seed_name=seed_name,
        message=message if not converged else "",
    )


def _descent_block(
    u: GridFunction,
    J: float,
    eta: float,
    problem: ProblemData,
    branch: str,
    active: np.ndarray,
    ops: _BranchOperators,
    settings: SolverSettings,
    max_steps: int,
) -> tuple[GridFunction, float, float, int, str]:
    """Up to ``max_steps`` projected-gradient steps from an on-branch point.

    Returns (point, energy, step size, steps used, status) with status one of
    'converged', 'stalled' (Armijo exhausted), 'budget'.
    """
    steps = 0
    while steps < max_steps:
        g = _masked_gradient(u, problem, active)
        res = float(np.max(np.abs(g)))
        if res <= settings.tol_grad:
            return u, J, eta, steps, "converged"
        steps += 1
        dn2 = dirichlet_norm_sq(u)
        d = problem.grid.zeros()
        d[active] = ops.precondition(g[active], problem.a * dn2 + 1.0)
        eta = min(eta * 2.0, settings.eta_max)
        accepted = False
        while eta > settings.eta_min:
            trial = np.maximum(u.values - eta * d, 0.0)
            if trial.any():
                cand = u.copy_with(trial)
                try:
                    tt = nehari_scaling(fibering_coeffs(cand, problem), branch)
                except (BranchNotFoundError, FiberingError):
                    tt = None
                if tt is not None:
                    scaled = cand.copy_with(tt * cand.values)
                    Jw = energy(scaled, problem).J
                    if Jw < J:
                        u, J = scaled, Jw
                        accepted = True
                        break
            eta /= 2.0
        if not accepted:
            return u, J, eta, steps, "stalled"
    return u, J, eta, steps, "budget"


def _minimize_from_seed(
    seed: GridFunction,
    problem: ProblemData,
    branch: str,
    active: np.ndarray,
    ops: _BranchOperators,
    settings: SolverSettings,
) -> tuple[GridFunction, int, str]:
    """Interleave descent blocks with Newton polish attempts.

    Descent globalizes (monotone in J along the branch); Newton finishes the
    residual once an attraction basin is reached, and is rejected whenever it
    fails to reduce the residual, collapses the iterate, or leaves the branch.
    """
    t = nehari_scaling(fibering_coeffs(seed, problem), branch)
    u = seed.copy_with(t * seed.values)
    J = energy(u, problem).J
    eta = settings.eta_init
    total = 0
    descent_stalled = False
    while total < settings.max_iter:
        budget = min(settings.newton_every, settings.max_iter - total)
        u, J, eta, used, status = _descent_block(
            u, J, eta, problem, branch, active, ops, settings, budget
        )
        total += used
        if status == "converged":
            return u, total, "converged"
        res_before = float(np.max(np.abs(_masked_gradient(u, problem, active))))
        u_n, steps, ok = _newton_polish(u, problem, active, ops, settings)
        total += steps
        accepted, u_acc = _accept_newton(u, u_n, problem, branch, active)
        if ok and accepted:
            # land exactly on the branch; the tiny rescale cannot lift the
            # residual above tolerance because Newton overshot it
            try:
                tt = nehari_scaling(fibering_coeffs(u_acc, problem), branch)
                proj = u_acc.copy_with(tt * u_acc.values)
                res_proj = float(np.max(np.abs(_masked_gradient(proj, problem, active))))
                if res_proj <= settings.tol_grad:
                    return proj, total, "converged"
                u_acc = proj
            except (BranchNotFoundError, FiberingError):
                return u_acc, total, "converged"
        if accepted:
            try:
                tt = nehari_scaling(fibering_coeffs(u_acc, problem), branch)
                u = u_acc.copy_with(tt * u_acc.values)
                J = energy(u, problem).J
            except (BranchNotFoundError, FiberingError):
                pass
        res_after = float(np.max(np.abs(_masked_gradient(u, problem, active))))
        if status == "stalled" and res_after >= res_before:
            if descent_stalled:
                return u, total, "stalled"
            descent_stalled = True
            eta = settings.eta_init
        else:
            descent_stalled = False
    return u, total, "max_iter"


def _accept_newton(
    u_old: GridFunction,
    u_new: GridFunction,
    problem: ProblemData,
    branch: str,
    active: np.ndarray,
) -> tuple[bool, GridFunction]:
    """Guard against Newton wandering to the trivial solution or off-branch."""
    if not np.any(u_new.values):
        return False, u_old
    old_scale = float(np.max(np.abs(u_old.values)))
    if float(np.max(np.abs(u_new.values))) < 1e-8 * max(old_scale, 1.0):
        return False, u_old
    res_old = float(np.max(np.abs(_masked_gradient(u_old, problem, active))))
    res_new = float(np.max(np.abs(_masked_gradient(u_new, problem, active))))
    if res_new >= res_old:
        return False, u_old
    try:
        nehari_scaling(fibering_coeffs(u_new, problem), branch)
    except (BranchNotFoundError, FiberingError):
        return False, u_old
    return True, u_new


def _newton_polish(
    u: GridFunction,
    problem: ProblemData,
    active: np.ndarray,
    ops: _BranchOperators,
    settings: SolverSettings,
) -> tuple[GridFunction, int, bool]:
    """Damped Newton on the full first variation; monotone in the residual.

    Overshoots the gradient tolerance by a few digits (until the float floor)
    so that the subsequent branch re-projection cannot lift the residual back
    above tolerance.
    """
    target = settings.tol_grad * 1e-4
    steps = 0
    for steps in range(1, settings.newton_max_steps + 1):
        g = _masked_gradient(u, problem, active)
        res = float(np.max(np.abs(g)))
        if res <= target:
            return u, steps - 1, True
        try:
            delta = ops.newton_delta(u, g[active])
        except RuntimeError:
            return u, steps - 1, res <= settings.tol_grad
        step = 1.0
        improved = False
        for _ in range(40):
            trial = u.values.copy()
            trial[active] = u.values[active] - step * delta
            np.maximum(trial, 0.0, out=trial)
            cand = u.copy_with(trial)
            res_new = float(np.max(np.abs(_masked_gradient(cand, problem, active))))
            if res_new < res:
                u = cand
                improved = True
                break
            step /= 2.0
        if not improved:
            return u, steps, res <= settings.tol_grad
    res = float(np.max(np.abs(_masked_gradient(u, problem, active))))
    return u, steps, res <= settings.tol_grad


def minimize_on_branch(
    problem: ProblemData,
    branch: str,
    u_init: GridFunction | None = None,
    settings: SolverSettings | None = None,
    active_mask: np.ndarray | None = None,
    seeds=None,
) -> SolveReport:
    """Minimize the energy on the requested Nehari branch.

    When ``u_init`` is missing or cannot be projected onto the branch, a
    deterministic multi-start over the standard seed family runs instead.
    Raises BranchNotFoundError when no admissible initializer exists.
    """
    if branch not in ("minus", "plus"):
        raise ValueError("branch must be 'minus' or 'plus'")
    settings = settings or SolverSettings()
    active = problem.grid.interior_mask if active_mask is None else (
        active_mask & problem.grid.interior_mask
    )
    ops = _BranchOperators(problem, active)

    candidates = []
    if u_init is not None:
        vals = np.abs(u_init.values.copy())
        vals[~active] = 0.0
        candidates.append(("u_init", lambda v=vals: GridFunction(problem.grid, v)))
    if seeds is not None:
        candidates.extend(seeds)
    else:
        candidates.extend(default_seeds(problem, branch, active))

    last_error: Exception | None = None
    for seed_name, seed_fn in candidates:
        try:
            seed = seed_fn() if callable(seed_fn) else seed_fn
            u, total, status = _minimize_from_seed(
                seed, problem, branch, active, ops, settings
            )
        except (BranchNotFoundError, FiberingError) as exc:
            last_error = exc
            continue
        message = "" if status == "converged" else f"iteration ended with status {status!r}"
        report = _certify(u, problem, branch, active, total, seed_name, settings, message)
        return report
    raise BranchNotFoundError(
        f"no seed admits the {branch} branch for this problem"
        + (f" (last: {last_error})" if last_error else "")
    )


# ---------------------------------------------------------------------------
# the local limit problem on the well region (a = 0, formally mu = infinity)
# ---------------------------------------------------------------------------

def solve_limit_problem(
    fields: CoefficientFields,
    grid: Grid,
    p: float,
    lam: float,
    settings: SolverSettings | None = None,
) -> LimitGroundState:
    """Ground state of the local problem on the well region with a = 0.

    Requires 2 < p < 4 and 0 <= lam < lambda1 of the well-restricted weighted
    eigenproblem.  Certifies the ground-state identity
    B = C = (2p/(p-2)) * alpha (relative residual reported).
    """
    if not 2 < p < 4:
        raise FiberingError("limit problem requires 2 < p < 4")
    eig = principal_eig_omega(fields, grid)
    if lam < 0 or lam >= eig.eigenvalue:
        raise SolverError(
            f"limit problem needs 0 <= lam < lambda1 = {eig.eigenvalue:.6g}, got {lam}"
        )
    problem = ProblemData(grid=grid, fields=fields, a=0.0, p=p, lam=lam, mu=1.0)
    active = fields.omega_interior_mask

    def phi_seed():
        return eig.eigenfunction

    def bump_seed():
        return gaussian_bump_seed(problem, active)

    report = minimize_on_branch(
        problem,
        "minus",
        settings=settings,
        active_mask=active,
        seeds=[("q_bump", bump_seed), ("phi_omega", phi_seed)],
    )
    w = report.solution
    B = dirichlet_norm_sq(w) - lam * weighted_mass(w, fields.f)
    C = q_power_term(w, problem)
    alpha = report.energy.J
    target = 2 * p / (p - 2) * alpha
    scale = max(abs(B), abs(C), abs(target), 1e-300)
    identity_residual = max(abs(B - C), abs(B - target)) / scale
    return LimitGroundState(
        w=w, alpha_infty=alpha, identity_residual=identity_residual, report=report
    )


def t_scalings_of_ground_state(
    w: GridFunction, problem: ProblemData
) -> tuple[float, float]:
    """The two Nehari scalings of the limit ground state under the full
    problem, ordered 1 < t_minus < (2/(4-p))^(1/(p-2)) < t_plus.

    Raises when problem.a is at or above the degenerate coefficient of w,
    where the two roots have merged and vanished.
    """
    coeffs = fibering_coeffs(w, problem)
    if not 2 < coeffs.p < 4:
        raise FiberingError("ground-state scalings require 2 < p < 4")
    _, a_star = degenerate_point(coeffs)
    if problem.a >= a_star:
        raise BranchNotFoundError(
            f"a = {problem.a:.6g} >= degenerate coefficient {a_star:.6g}: no Nehari roots"
        )
    cls = stationary_points(coeffs)
    maxima = [t for t, k in cls.roots if k == "max"]
    minima = [t for t, k in cls.roots if k == "min"]
    if not maxima or not minima:
        raise BranchNotFoundError(
            f"expected a max and a min root, got {cls.roots}"
        )
    t_minus, t_plus = maxima[0], minima[-1]
    pivot = (2.0 / (4.0 - coeffs.p)) ** (1.0 / (coeffs.p - 2.0))
    if not (1.0 < t_minus < pivot < t_plus):
        raise FiberingError(
            f"root ordering violated: expected 1 < {t_minus:.6g} < {pivot:.6g} < {t_plus:.6g}"
        )
    return t_minus, t_plus
