"""Scalar analysis of the ray maps h(t) = J(t u).

For coefficients A = dnorm4, B = munorm2 - lam * f_term, C = q_term and
power p, the ray map and its derivatives are

    h(t)   = (a/4) A t^4 + (B/2) t^2 - (C/p) t^p
    h'(t)  = a A t^3 + B t - C t^(p-1)
    h''(t) = 3 a A t^2 + B - (p-1) C t^(p-2)

Positive stationary points of h are the Nehari scalings of u; their kind
(max / min / inflection) decides which manifold branch t*u lands on.  All
root finding happens on g(t) = h'(t)/t = a A t^2 + B - C t^(p-2), which has
at most two positive roots in the parameter ranges of interest, so a
geometric bracketing ladder is exhaustive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .grid import GridFunction, ProblemData
from .functionals import (
    dirichlet_norm_sq,
    mu_norm_sq,
    q_power_term,
    weighted_mass,
)

LADDER_LO = 1e-6
LADDER_HI = 1e6
LADDER_PER_DECADE = 25
INFLECTION_REL_TOL = 1e-8


class FiberingError(ValueError):
    """Ill-posed fibering request (zero function, bad power range, ...)."""


class BranchNotFoundError(RuntimeError):
    """The requested Nehari branch has no root for this function."""


@dataclass(frozen=True)
class FiberingCoefficients:
    """The scalars (A, B, C, p, a) that fully determine the ray map."""

    A: float  # fourth power of the gradient norm, >= 0
    B: float  # munorm2 - lam * f_term
    C: float  # integral of Q |u|^p
    p: float
    a: float

    def __post_init__(self) -> None:
        if self.A < 0:
            raise FiberingError("A must be >= 0")
        if self.a < 0:
            raise FiberingError("a must be >= 0")
        if self.p <= 2:
            raise FiberingError("p must be > 2")


@dataclass(frozen=True)
class FiberClass:
    """Sign-set membership plus the classified stationary points."""

    lambda_set: str  # "positive" / "negative" / "zero"  (sign of B)
    theta_set: str   # "positive" / "negative" / "zero"  (sign of Phi_p)
    roots: tuple[tuple[float, str], ...]  # sorted (t, kind)

    def to_json_dict(self) -> dict:
        return {
            "lambda_set": self.lambda_set,
            "theta_set": self.theta_set,
            "roots": [{"t": t, "kind": k} for t, k in self.roots],
        }


def fibering_coeffs(u: GridFunction, problem: ProblemData) -> FiberingCoefficients:
    if not np.any(u.values):
        raise FiberingError("fibering coefficients are undefined for u == 0")
    dn2 = dirichlet_norm_sq(u)
    return FiberingCoefficients(
        A=dn2 * dn2,
        B=mu_norm_sq(u, problem) - problem.lam * weighted_mass(u, problem.fields.f),
        C=q_power_term(u, problem),
        p=problem.p,
        a=problem.a,
    )


def h_value(coeffs: FiberingCoefficients, t: float) -> float:
    _check_t(t)
    c = coeffs
    return (c.a / 4) * c.A * t**4 + (c.B / 2) * t**2 - (c.C / c.p) * t**c.p


def h_prime(coeffs: FiberingCoefficients, t: float) -> float:
    _check_t(t)
    c = coeffs
    return c.a * c.A * t**3 + c.B * t - c.C * t ** (c.p - 1)


def h_second(coeffs: FiberingCoefficients, t: float) -> float:
    _check_t(t)
    c = coeffs
    return 3 * c.a * c.A * t**2 + c.B - (c.p - 1) * c.C * t ** (c.p - 2)


def _check_t(t: float) -> None:
    if not t > 0:
        raise FiberingError("ray parameter t must be > 0")


def phi_indicator(coeffs: FiberingCoefficients) -> float:
    """Superlinear sign indicator: C for p != 4, C - a*A at p = 4."""
    if coeffs.p == 4.0:
        return coeffs.C - coeffs.a * coeffs.A
    return coeffs.C


def _sign_name(x: float) -> str:
    if x > 0:
        return "positive"
    if x < 0:
        return "negative"
    return "zero"


def _g(coeffs: FiberingCoefficients, t: np.ndarray | float):
    """h'(t)/t; same positive roots as h', no trivial zero."""
    c = coeffs
    return c.a * c.A * t**2 + c.B - c.C * t ** (c.p - 2)


def _g_prime(coeffs: FiberingCoefficients, t: float) -> float:
    c = coeffs
    return 2 * c.a * c.A * t - c.C * (c.p - 2) * t ** (c.p - 3)


def _newton_polish(coeffs: FiberingCoefficients, t: float) -> float:
    for _ in range(4):
        d = _g_prime(coeffs, t)
        if d == 0:
            break
        step = _g(coeffs, t) / d
        t_new = t - step
        if not (t_new > 0 and np.isfinite(t_new)):
            break
        t = t_new
        if abs(step) <= 1e-16 * t:
            break
    return t


def _root_scale(coeffs: FiberingCoefficients, t: float) -> float:
    c = coeffs
    return 3 * c.a * c.A * t**2 + abs(c.B) + (c.p - 1) * abs(c.C) * t ** (c.p - 2)


def _ladder_range(coeffs: FiberingCoefficients) -> tuple[float, float]:
    """Geometric bracketing range guaranteed to contain every positive root.

    The default window can miss the single large root when p sits close to 4
    (its location grows without bound), so the window is extended until the
    sampled signs match the known t -> 0 and t -> infinity asymptotics and
    the unique interior critical point of g is covered.
    """
    c = coeffs
    lo, hi = LADDER_LO, LADDER_HI
    if c.a > 0 and c.A > 0 and c.C > 0 and c.p != 4.0:
        # critical point of g; both roots straddle it when they exist
        t_crit = (2 * c.a * c.A / ((c.p - 2) * c.C)) ** (1.0 / (c.p - 4))
        if np.isfinite(t_crit) and t_crit > 0:
            hi = max(hi, 10.0 * t_crit)
            lo = min(lo, 0.1 * t_crit)
    # settle the asymptotic signs
    with np.errstate(over="ignore"):
        if c.p > 4:
            s_inf = -np.sign(c.C) if c.C != 0 else np.sign(c.a * c.A)
        elif c.p == 4.0:
            s_inf = np.sign(c.a * c.A - c.C)
        else:
            s_inf = np.sign(c.a * c.A) if c.a * c.A != 0 else -np.sign(c.C)
        s_zero = np.sign(c.B) if c.B != 0 else -np.sign(c.C)
        while s_inf != 0 and np.sign(_g(c, hi)) != s_inf and hi < 1e60:
            hi *= 10.0
        while s_zero != 0 and np.sign(_g(c, lo)) != s_zero and lo > 1e-60:
            lo /= 10.0
    return lo, hi


def stationary_points(coeffs: FiberingCoefficients) -> FiberClass:
    """All positive roots of h' with multiplicity-aware classification.

    Sign-change brackets on a geometric ladder catch simple roots; tangency
    (double) roots are caught at the bracketed critical points of g where
    |g| is below tolerance, and reported as inflections.
    """
    if coeffs.A == 0 and coeffs.C == 0:
        # h'(t) = B t: no positive roots unless B == 0 (degenerate ray).
        roots: list[tuple[float, str]] = []
        return _classify(coeffs, roots)

    lo, hi = _ladder_range(coeffs)
    ndec = int(np.ceil(np.log10(hi / lo)))
    ts = np.geomspace(lo, hi, ndec * LADDER_PER_DECADE + 1)
    gs = _g(coeffs, ts)
    roots = []
    for i in range(len(ts) - 1):
        if gs[i] == 0.0:
            roots.append(float(ts[i]))
        elif gs[i] * gs[i + 1] < 0:
            try:
                r = brentq(lambda t: _g(coeffs, t), ts[i], ts[i + 1],
                           xtol=1e-300, rtol=8.9e-16, maxiter=200)
            except RuntimeError as exc:
                raise BranchNotFoundError(
                    f"root bracketing failed on [{ts[i]:.3e}, {ts[i + 1]:.3e}]: {exc}"
                ) from exc
            roots.append(_newton_polish(coeffs, float(r)))
    if gs[-1] == 0.0:
        roots.append(float(ts[-1]))

    # critical points of g: tangency (double) roots at noise level, and
    # near-degenerate simple pairs whose dip is narrower than a ladder cell
    dg = _g_prime(coeffs, ts)
    for i in range(len(ts) - 1):
        if dg[i] * dg[i + 1] < 0:
            tc = brentq(lambda t: _g_prime(coeffs, t), ts[i], ts[i + 1],
                        xtol=1e-300, rtol=8.9e-16, maxiter=200)
            gc = _g(coeffs, tc)
            scale = _root_scale(coeffs, tc)
            if abs(gc) <= 1e-10 * scale:
                if not any(abs(tc - r) <= 1e-9 * tc for r in roots):
                    roots.append(float(tc))
            elif gc < 0:
                for lo_b, hi_b in ((ts[i], tc), (tc, ts[i + 1])):
                    if _g(coeffs, lo_b) * _g(coeffs, hi_b) < 0:
                        r = brentq(lambda t: _g(coeffs, t), lo_b, hi_b,
                                   xtol=1e-300, rtol=8.9e-16, maxiter=200)
                        r = _newton_polish(coeffs, float(r))
                        if not any(abs(r - q) <= 1e-9 * max(r, q) for q in roots):
                            roots.append(r)
    return _classify(coeffs, sorted(set(roots)))


def _classify(coeffs: FiberingCoefficients, roots) -> FiberClass:
    out = []
    for t in roots:
        h2 = h_second(coeffs, t)
        scale = _root_scale(coeffs, t)
        if abs(h2) <= INFLECTION_REL_TOL * max(scale, 1e-300):
            kind = "inflection"
        elif h2 < 0:
            kind = "max"
        else:
            kind = "min"
        out.append((float(t), kind))
    return FiberClass(
        lambda_set=_sign_name(coeffs.B),
        theta_set=_sign_name(phi_indicator(coeffs)),
        roots=tuple(out),
    )


def project_to_nehari(
    u: GridFunction, problem: ProblemData, branch: str
) -> tuple[float, GridFunction]:
    """Scale u onto the requested Nehari branch: 'minus' takes the ray
    maximum (negative second derivative), 'plus' the ray minimum."""
    t = nehari_scaling(fibering_coeffs(u, problem), branch)
    return t, u.copy_with(t * u.values)


def nehari_scaling(coeffs: FiberingCoefficients, branch: str) -> float:
    if branch not in ("minus", "plus"):
        raise FiberingError(f"branch must be 'minus' or 'plus', got {branch!r}")
    cls = stationary_points(coeffs)
    want = "max" if branch == "minus" else "min"
    candidates = [t for t, k in cls.roots if k == want]
    if not candidates:
        raise BranchNotFoundError(
            f"no {branch}-branch scaling exists: sign sets "
            f"(lambda={cls.lambda_set}, theta={cls.theta_set}), "
            f"roots={[(round(t, 6), k) for t, k in cls.roots]}"
        )
    return candidates[0] if want == "max" else candidates[-1]


def degenerate_point(coeffs: FiberingCoefficients) -> tuple[float, float]:
    """Closed-form (t, a) at which the ray map has a doubly-degenerate
    stationary point: h'(t) = h''(t) = 0.

    Requires 2 < p < 4 and B, C > 0.  The returned a is the unique Kirchhoff
    coefficient producing the double root; below it h' has two simple positive
    roots, above it none.
    """
    p, A, B, C = coeffs.p, coeffs.A, coeffs.B, coeffs.C
    if not 2 < p < 4:
        raise FiberingError("degenerate point requires 2 < p < 4")
    if B <= 0 or C <= 0:
        raise FiberingError("degenerate point requires B > 0 and C > 0")
    if A <= 0:
        raise FiberingError("degenerate point requires A > 0")
    t_star = (2 * B / ((4 - p) * C)) ** (1.0 / (p - 2))
    a_star = (
        (p - 2) / (4 - p)
        * ((4 - p) / 2) ** (2.0 / (p - 2))
        * degeneracy_quotient(coeffs)
    )
    return t_star, a_star


def degeneracy_quotient(coeffs: FiberingCoefficients) -> float:
    """C^(2/(p-2)) / (A * B^((4-p)/(p-2))): the u-dependent part of the
    degenerate Kirchhoff coefficient."""
    p, A, B, C = coeffs.p, coeffs.A, coeffs.B, coeffs.C
    return C ** (2.0 / (p - 2)) / (A * B ** ((4.0 - p) / (p - 2)))


def degenerate_params(u: GridFunction, problem: ProblemData) -> tuple[float, float]:
    """Closed forms (t(u), a(u)) for the degenerate ray of u under the given
    problem; with a := a(u) the ray map satisfies h'(t(u)) = h''(t(u)) = 0."""
    coeffs = fibering_coeffs(u, problem)
    return degenerate_point(coeffs)
