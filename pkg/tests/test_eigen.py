import numpy as np
import pytest

from steepwell import (
    ProblemData,
    build_grid,
    make_well_fields,
    mu_norm_sq,
    principal_eig_full,
    principal_eig_omega,
    weighted_mass,
    well_convergence_sweep,
)
from steepwell.eigen import EigenSolveError
from steepwell.grid import stiffness_csr
from steepwell.thresholds import random_sine_field
import scipy.sparse.linalg as spla


def test_interval_eigenpair(grid401, eig_omega):
    assert eig_omega.eigenvalue == pytest.approx((np.pi / 2) ** 2, abs=1e-3)
    x = grid401.axes[0]
    ref = np.where(np.abs(x) <= 1.0, np.cos(np.pi * x / 2), 0.0)
    assert np.max(np.abs(eig_omega.eigenfunction.values - ref)) <= 5e-4
    assert eig_omega.residual <= 1e-10


def test_eigen_result_invariants(grid401, fields_default, eig_omega):
    phi = eig_omega.eigenfunction
    assert abs(weighted_mass(phi, fields_default.f) - 1.0) <= 1e-10
    assert phi.values[fields_default.omega_interior_mask].min() > 0
    # energy identity: dirichlet energy equals the eigenvalue
    assert eig_omega.dirichlet_energy == pytest.approx(eig_omega.eigenvalue, rel=1e-6)


def test_weight_scaling(grid401):
    f4 = make_well_fields(grid401, 1.0, 2.0, "constant 4.0", "constant 1.0")
    f1 = make_well_fields(grid401, 1.0, 2.0, "constant 1.0", "constant 1.0")
    e4 = principal_eig_omega(f4, grid401)
    e1 = principal_eig_omega(f1, grid401)
    assert e4.eigenvalue == pytest.approx(e1.eigenvalue / 4.0, rel=1e-10)
    assert abs(weighted_mass(e4.eigenfunction, f4.f) - 1.0) <= 1e-10


def test_no_positive_weight_direction(grid401):
    # f is positive only on the well boundary ring, negative on its interior
    fields = make_well_fields(
        grid401, 1.0, 2.0, "step_radius 0.995 -1.0 1.0", "constant 1.0"
    )
    with pytest.raises(EigenSolveError):
        principal_eig_omega(fields, grid401)


def test_full_problem_monotone_in_mu(grid401, fields_default, lam1):
    vals = []
    for mu in (10.0, 100.0, 1000.0, 1e4):
        pb = ProblemData(grid=grid401, fields=fields_default, a=1.0, p=5.0, lam=1.0, mu=mu)
        vals.append(principal_eig_full(pb).eigenvalue)
    assert all(vals[i] < vals[i + 1] for i in range(len(vals) - 1))
    assert all(v < lam1 for v in vals)


def test_rayleigh_bound(grid401, fields_default, lam_tilde_1e4, rng):
    pb = ProblemData(grid=grid401, fields=fields_default, a=1.0, p=5.0, lam=1.0, mu=1e4)
    for _ in range(50):
        u = random_sine_field(grid401, rng)
        denom = weighted_mass(u, fields_default.f)
        if denom <= 0:
            continue
        assert mu_norm_sq(u, pb) / denom >= lam_tilde_1e4 - 1e-8


def test_deep_well_discrete_limit(grid401, fields_default, lam1):
    """As mu grows the full-box value approaches the Dirichlet eigenvalue of
    the V = 0 node set (walls one cell outside the well boundary)."""
    mask = (fields_default.V.values == 0.0) & grid401.interior_mask
    A = stiffness_csr(grid401, mask)
    lu = spla.splu(A.tocsc())
    v = np.ones(A.shape[0])
    for _ in range(200):
        v = lu.solve(v)
        v /= np.linalg.norm(v)
    ceiling = float(v @ (A @ v))
    pb = ProblemData(grid=grid401, fields=fields_default, a=1.0, p=5.0, lam=1.0, mu=1e12)
    lam = principal_eig_full(pb).eigenvalue
    # the wall penetration at finite mu leaves an O(1/(mu h^2 V)) defect
    assert lam == pytest.approx(ceiling, rel=1e-5)
    assert lam < lam1


def test_indefinite_weight_full_problem(grid401):
    """Sign-changing f: positive inside the well, negative outside."""
    fields = make_well_fields(
        grid401, 1.0, 2.0, "step_radius 1.0 1.0 -0.5", "constant 1.0"
    )
    vals = []
    for mu in (10.0, 1000.0):
        pb = ProblemData(grid=grid401, fields=fields, a=1.0, p=5.0, lam=1.0, mu=mu)
        eig = principal_eig_full(pb)
        assert eig.eigenvalue > 0
        assert abs(weighted_mass(eig.eigenfunction, fields.f) - 1.0) <= 1e-8
        vals.append(eig.eigenvalue)
    assert vals[0] <= vals[1] + 1e-10


def test_well_convergence_sweep(grid401, fields_default, lam1):
    pb = ProblemData(grid=grid401, fields=fields_default, a=1.0, p=5.0, lam=1.0, mu=1.0)
    rows = well_convergence_sweep(pb, [10.0, 100.0, 1000.0, 1e4])
    lts = [r["lambda_tilde"] for r in rows]
    gaps = [r["l2_gap"] for r in rows]
    assert all(lts[i] < lts[i + 1] for i in range(3))
    assert all(v < (np.pi / 2) ** 2 for v in lts)
    assert all(gaps[i] > gaps[i + 1] for i in range(3))
    assert all(r["residual"] <= 1e-10 for r in rows)


def test_sweep_single_entry(grid401, fields_default):
    pb = ProblemData(grid=grid401, fields=fields_default, a=1.0, p=5.0, lam=1.0, mu=1.0)
    rows = well_convergence_sweep(pb, [100.0])
    assert len(rows) == 1


def test_sweep_requires_increasing(grid401, fields_default):
    pb = ProblemData(grid=grid401, fields=fields_default, a=1.0, p=5.0, lam=1.0, mu=1.0)
    with pytest.raises(ValueError):
        well_convergence_sweep(pb, [100.0, 10.0])


def test_2d_square_eigenvalue():
    g = build_grid(2, [(-2.0, 2.0), (-2.0, 2.0)], [41, 41])
    f = make_well_fields(g, 1.0, 2.0, "constant 1.0", "constant 1.0")
    eig = principal_eig_omega(f, g)
    # product eigenfunction on the (-1,1)^2 well: 2 * (pi/2)^2
    assert eig.eigenvalue == pytest.approx(2 * (np.pi / 2) ** 2, rel=2e-2)
    assert eig.eigenfunction.values[f.omega_interior_mask].min() > 0
