"""Norms, the energy functional and its first variation on grid functions.

The energy of u for a problem instance (a, p, lam, mu) is

    J(u) = (a/4) * dnorm4 + (1/2) * munorm2 - (1/p) * q_term - (lam/2) * f_term

with dnorm4 the squared Dirichlet energy squared (fourth power of the
gradient norm), munorm2 the well norm, q_term = integral of Q|u|^p and
f_term = integral of f u^2.  The gradient is the node-wise representative of
the first variation against the trapezoid inner product, so central finite
differences of J match <grad, v> exactly in formulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    Grid,
    GridFunction,
    GridError,
    ProblemData,
    integrate,
    neg_laplacian_values,
)


@dataclass(frozen=True)
class EnergyBreakdown:
    dnorm4: float
    munorm2: float
    q_term: float
    f_term: float
    J: float

    def to_json_dict(self) -> dict:
        return {
            "dnorm4": self.dnorm4,
            "munorm2": self.munorm2,
            "q_term": self.q_term,
            "f_term": self.f_term,
            "J": self.J,
        }


def assemble_energy(
    a: float, p: float, lam: float,
    dnorm4: float, munorm2: float, q_term: float, f_term: float,
) -> EnergyBreakdown:
    J = (a / 4.0) * dnorm4 + 0.5 * munorm2 - q_term / p - (lam / 2.0) * f_term
    return EnergyBreakdown(dnorm4, munorm2, q_term, f_term, J)


def _require_boundary_zero(u: GridFunction) -> None:
    if not u.is_boundary_zero():
        raise GridError("function must vanish on the box boundary")


def dirichlet_norm_sq(u: GridFunction) -> float:
    """Squared gradient norm, evaluated as integrate(u * (-Delta u)) >= 0."""
    _require_boundary_zero(u)
    lap = neg_laplacian_values(u.grid, u.values)
    return float(np.sum(u.grid.quad_weights * u.values * lap))


def mu_norm_sq(u: GridFunction, problem: ProblemData) -> float:
    """Well norm squared: dirichlet_norm_sq(u) + mu * integral(V u^2)."""
    return dirichlet_norm_sq(u) + problem.mu * weighted_mass(u, problem.fields.V)


def weighted_mass(u: GridFunction, w: GridFunction | np.ndarray) -> float:
    """Integral of w * u^2; sign-indefinite when w is."""
    wv = w.values if isinstance(w, GridFunction) else np.asarray(w)
    return integrate(u.grid, wv * u.values**2)


def q_power_term(u: GridFunction, problem: ProblemData) -> float:
    """Integral of Q |u|^p."""
    return integrate(u.grid, problem.fields.Q.values * np.abs(u.values) ** problem.p)


def energy(u: GridFunction, problem: ProblemData) -> EnergyBreakdown:
    _require_boundary_zero(u)
    dn2 = dirichlet_norm_sq(u)
    return assemble_energy(
        problem.a,
        problem.p,
        problem.lam,
        dn2 * dn2,
        dn2 + problem.mu * weighted_mass(u, problem.fields.V),
        q_power_term(u, problem),
        weighted_mass(u, problem.fields.f),
    )


def energy_gradient(u: GridFunction, problem: ProblemData) -> GridFunction:
    """Node-wise gradient of J against the quadrature inner product.

    (a * dirichlet_norm_sq(u) + 1) * (-Delta u) + mu V u - Q |u|^(p-2) u
    - lam f u, with boundary rows zeroed.  |u|^(p-2) u is extended by 0 at
    u = 0 for 2 < p < 3.
    """
    if problem.p < 2:
        raise ValueError("energy gradient requires p >= 2")
    _require_boundary_zero(u)
    grid = u.grid
    lap = neg_laplacian_values(grid, u.values)
    dn2 = float(np.sum(grid.quad_weights * u.values * lap))
    flds = problem.fields
    g = (
        (problem.a * dn2 + 1.0) * lap
        + problem.mu * flds.V.values * u.values
        - flds.Q.values * np.abs(u.values) ** (problem.p - 2) * u.values
        - problem.lam * flds.f.values * u.values
    )
    g[grid.boundary_mask] = 0.0
    return GridFunction(grid, g)


def directional_derivative(
    u: GridFunction, v: GridFunction, problem: ProblemData, eps: float = 1e-5
) -> float:
    """Central finite difference of J along v; oracle for the gradient."""
    up = u.copy_with(u.values + eps * v.values)
    um = u.copy_with(u.values - eps * v.values)
    return (energy(up, problem).J - energy(um, problem).J) / (2.0 * eps)


def quad_inner(grid: Grid, g: GridFunction, v: GridFunction) -> float:
    """Quadrature inner product <g, v> used by the gradient representation."""
    return float(np.sum(grid.quad_weights * g.values * v.values))
