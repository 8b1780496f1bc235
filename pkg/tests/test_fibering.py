import numpy as np
import pytest

from steepwell import (
    FiberingCoefficients,
    ProblemData,
    degenerate_point,
    fibering_coeffs,
    h_prime,
    h_second,
    h_value,
    project_to_nehari,
    stationary_points,
)
from steepwell.fibering import BranchNotFoundError, FiberingError, nehari_scaling
from steepwell.functionals import (
    dirichlet_norm_sq,
    mu_norm_sq,
    q_power_term,
    weighted_mass,
)
from steepwell.thresholds import random_sine_field


def test_h_prime_factorization_cubic():
    # h'(t) = t^3 + t - 2 t^2 = t (t - 1)^2
    c = FiberingCoefficients(A=1.0, B=1.0, C=2.0, p=3.0, a=1.0)
    for t in (0.25, 0.5, 1.0, 1.5, 3.0):
        assert h_prime(c, t) == pytest.approx(t * (t - 1.0) ** 2, abs=1e-14)
    cls = stationary_points(c)
    assert len(cls.roots) == 1
    t, kind = cls.roots[0]
    assert t == pytest.approx(1.0, abs=1e-7)
    assert kind == "inflection"


def test_single_max_closed_form():
    c = FiberingCoefficients(A=1.0, B=1.0, C=1.0, p=5.0, a=0.0)
    cls = stationary_points(c)
    assert len(cls.roots) == 1
    t, kind = cls.roots[0]
    assert t == pytest.approx(1.0, rel=1e-12)
    assert kind == "max"


def test_no_roots_when_c_zero():
    c = FiberingCoefficients(A=1.0, B=1.0, C=0.0, p=5.0, a=0.0)
    assert stationary_points(c).roots == ()


def test_p4_closed_form():
    c = FiberingCoefficients(A=1.0, B=1.0, C=2.0, p=4.0, a=1.0)
    assert stationary_points(c).theta_set == "positive"  # C - aA = 1 > 0
    roots = stationary_points(c).roots
    assert len(roots) == 1
    t, kind = roots[0]
    assert t == pytest.approx(1.0, rel=1e-12)  # (B/(C-aA))^(1/2)
    assert kind == "max"


def test_h_value_and_domain():
    c = FiberingCoefficients(A=2.0, B=-1.0, C=0.5, p=3.5, a=0.25)
    t = 1.3
    expect = 0.25 / 4 * 2 * t**4 + (-1.0 / 2) * t**2 - 0.5 / 3.5 * t**3.5
    assert h_value(c, t) == pytest.approx(expect, rel=1e-14)
    with pytest.raises(FiberingError):
        h_prime(c, 0.0)
    with pytest.raises(FiberingError):
        h_second(c, -1.0)


def test_coeffs_scaling(grid401, fields_default, lam1, rng):
    problem = ProblemData(
        grid=grid401, fields=fields_default, a=0.5, p=5.0, lam=0.5 * lam1, mu=100.0
    )
    u = random_sine_field(grid401, rng)
    c1 = fibering_coeffs(u, problem)
    c2 = fibering_coeffs(u.copy_with(2 * u.values), problem)
    assert c2.A == pytest.approx(16 * c1.A, rel=1e-12)
    assert c2.B == pytest.approx(4 * c1.B, rel=1e-12)
    assert c2.C == pytest.approx(2**problem.p * c1.C, rel=1e-12)


def test_coeffs_reject_zero(grid401, fields_default):
    problem = ProblemData(
        grid=grid401, fields=fields_default, a=0.5, p=5.0, lam=1.0, mu=100.0
    )
    from steepwell import GridFunction

    with pytest.raises(FiberingError):
        fibering_coeffs(GridFunction(grid401, np.zeros(grid401.shape)), problem)


def test_b_reduces_to_dirichlet_energy(grid401, fields_default, eig_omega):
    """With no linear coupling and support inside the well (V = 0 there),
    the quadratic coefficient is exactly the Dirichlet energy."""
    problem = ProblemData(
        grid=grid401, fields=fields_default, a=0.5, p=5.0, lam=0.0, mu=1e4
    )
    u = eig_omega.eigenfunction  # supported on the well region
    c = fibering_coeffs(u, problem)
    assert c.B == pytest.approx(dirichlet_norm_sq(u), rel=1e-13)
    assert c.B > 0


def test_project_principal_eigenfunction(grid401, fields_default, eig_omega):
    # below the eigenvalue with a small Kirchhoff coefficient, the
    # eigenfunction's ray carries a finite maximum scaling
    problem = ProblemData(
        grid=grid401, fields=fields_default, a=0.01, p=5.0,
        lam=0.5 * eig_omega.eigenvalue, mu=1e4,
    )
    t, scaled = project_to_nehari(eig_omega.eigenfunction, problem, "minus")
    assert 0 < t < np.inf
    assert h_second(fibering_coeffs(scaled, problem), 1.0) < 0


def test_principal_eigenfunction_b_vanishes(grid401, fields_default, eig_omega):
    problem = ProblemData(
        grid=grid401,
        fields=fields_default,
        a=0.5,
        p=5.0,
        lam=eig_omega.eigenvalue,
        mu=1e4,
    )
    c = fibering_coeffs(eig_omega.eigenfunction, problem)
    assert abs(c.B) <= 1e-6


def test_project_to_nehari_identity(grid401, fields_default, lam1, lam_tilde_1e4, rng):
    problem = ProblemData(
        grid=grid401, fields=fields_default, a=0.1, p=5.0,
        lam=0.5 * lam_tilde_1e4, mu=1e4,
    )
    done = 0
    while done < 100:
        u = random_sine_field(grid401, rng)
        try:
            t, scaled = project_to_nehari(u, problem, "minus")
        except BranchNotFoundError:
            continue
        lhs = problem.a * dirichlet_norm_sq(scaled) ** 2 + mu_norm_sq(scaled, problem)
        rhs = q_power_term(scaled, problem) + problem.lam * weighted_mass(
            scaled, fields_default.f
        )
        assert abs(lhs - rhs) <= 1e-9 * max(abs(lhs), abs(rhs))
        assert t > 0
        done += 1


def test_project_branch_absent(grid401, fields_default, lam_tilde_1e4, rng):
    problem = ProblemData(
        grid=grid401, fields=fields_default, a=0.1, p=5.0,
        lam=0.5 * lam_tilde_1e4, mu=1e4,
    )
    # functions with C < 0 and B > 0 have a strictly increasing ray map
    while True:
        u = random_sine_field(grid401, rng)
        c = fibering_coeffs(u, problem)
        if c.C < 0:
            break
    with pytest.raises(BranchNotFoundError):
        nehari_scaling(c, "minus")
    with pytest.raises(BranchNotFoundError):
        nehari_scaling(c, "plus")


def test_unique_max_above_p4(rng):
    for _ in range(200):
        c = FiberingCoefficients(
            A=float(rng.uniform(0.2, 5)),
            B=float(rng.uniform(0.1, 5)),
            C=float(rng.uniform(0.1, 5)),
            p=float(rng.uniform(4.05, 5.95)),
            a=float(rng.uniform(0.01, 2)),
        )
        roots = stationary_points(c).roots
        assert len(roots) == 1
        assert roots[0][1] == "max"


def test_degenerate_point_exact_cases():
    t, a = degenerate_point(FiberingCoefficients(A=1.0, B=1.0, C=2.0, p=3.0, a=0.0))
    assert (t, a) == (pytest.approx(1.0, rel=1e-14), pytest.approx(1.0, rel=1e-14))
    t2, a2 = degenerate_point(FiberingCoefficients(A=1.0, B=2.0, C=2.0, p=3.0, a=0.0))
    assert t2 == pytest.approx(2.0, rel=1e-14)
    assert a2 == pytest.approx(0.5, rel=1e-14)
    # verify the double root by substitution: 0.5 t^3 + 2 t - 2 t^2 = 0.5 t (t-2)^2
    c = FiberingCoefficients(A=1.0, B=2.0, C=2.0, p=3.0, a=a2)
    assert h_prime(c, t2) == pytest.approx(0.0, abs=1e-14)
    assert h_second(c, t2) == pytest.approx(0.0, abs=1e-14)


def test_degenerate_point_homogeneity():
    base = FiberingCoefficients(A=1.0, B=1.0, C=2.0, p=3.0, a=0.0)
    t1, a1 = degenerate_point(base)
    doubled = FiberingCoefficients(A=1.0, B=2.0, C=2.0, p=3.0, a=0.0)
    t2, a2 = degenerate_point(doubled)
    assert t2 == pytest.approx(2 * t1, rel=1e-14)
    assert a2 == pytest.approx(a1 / 2, rel=1e-14)


def test_degenerate_params_on_grid_function(grid401, fields_qconst, lam1, rng):
    from steepwell import degenerate_params

    pb = ProblemData(grid=grid401, fields=fields_qconst, a=1.0, p=3.0,
                     lam=0.3 * lam1, mu=1e4)
    u = random_sine_field(grid401, rng)
    t_u, a_u = degenerate_params(u, pb)
    c = fibering_coeffs(u, pb)
    with_a = FiberingCoefficients(A=c.A, B=c.B, C=c.C, p=c.p, a=a_u)
    scale = abs(c.B) * t_u + abs(c.C) * t_u ** (c.p - 1)
    assert abs(h_prime(with_a, t_u)) <= 1e-9 * max(scale, 1.0)
    assert abs(h_second(with_a, t_u)) <= 1e-8 * max(scale, 1.0)


def test_degenerate_point_domain_errors():
    with pytest.raises(FiberingError):
        degenerate_point(FiberingCoefficients(A=1.0, B=1.0, C=1.0, p=4.5, a=0.0))
    with pytest.raises(FiberingError):
        degenerate_point(FiberingCoefficients(A=1.0, B=-1.0, C=1.0, p=3.0, a=0.0))
    with pytest.raises(FiberingError):
        degenerate_point(FiberingCoefficients(A=1.0, B=1.0, C=-1.0, p=3.0, a=0.0))


def test_two_roots_below_degeneracy_none_above(rng):
    for _ in range(100):
        p = float(rng.uniform(2.2, 3.8))
        cf0 = FiberingCoefficients(
            A=float(rng.uniform(0.5, 2)),
            B=float(rng.uniform(0.5, 2)),
            C=float(rng.uniform(0.5, 2)),
            p=p,
            a=0.0,
        )
        _, a_star = degenerate_point(cf0)
        below = FiberingCoefficients(A=cf0.A, B=cf0.B, C=cf0.C, p=p, a=0.5 * a_star)
        roots = stationary_points(below).roots
        kinds = [k for _, k in roots]
        assert kinds == ["max", "min"]
        above = FiberingCoefficients(A=cf0.A, B=cf0.B, C=cf0.C, p=p, a=1.5 * a_star)
        assert stationary_points(above).roots == ()


def test_triple_identity_on_manifold(rng):
    """After scaling to a stationary point, the three expressions for the
    second derivative agree."""
    for _ in range(50):
        p = float(rng.uniform(2.2, 5.8))
        A = float(rng.uniform(0.2, 3))
        B = float(rng.uniform(0.1, 3))
        C = float(rng.uniform(0.1, 3))
        if p >= 4:
            a = 0.5 * C / A if p == 4.0 else float(rng.uniform(0.05, 1.0))
        else:
            _, a_star = degenerate_point(
                FiberingCoefficients(A=A, B=B, C=C, p=p, a=0.0)
            )
            a = 0.5 * a_star
        c = FiberingCoefficients(A=A, B=B, C=C, p=p, a=a)
        try:
            t = nehari_scaling(c, "minus")
        except BranchNotFoundError:
            continue
        ct = FiberingCoefficients(A=A * t**4, B=B * t**2, C=C * t**p, p=p, a=a)
        e1 = -(p - 2) * ct.B - a * (p - 4) * ct.A
        e2 = 2 * a * ct.A - (p - 2) * ct.C
        e3 = -2 * ct.B - (p - 4) * ct.C
        denom = max(abs(e1), abs(e2), abs(e3), 1e-300)
        assert max(abs(e1 - e2), abs(e1 - e3), abs(e2 - e3)) / denom <= 1e-10


def test_classification_consistent_with_h_second(rng):
    for _ in range(100):
        c = FiberingCoefficients(
            A=float(rng.uniform(0.2, 3)),
            B=float(rng.uniform(-3, 3)),
            C=float(rng.uniform(-3, 3)),
            p=float(rng.uniform(2.2, 5.8)),
            a=float(rng.uniform(0.0, 1.0)),
        )
        for t, kind in stationary_points(c).roots:
            h2 = h_second(c, t)
            if kind == "max":
                assert h2 < 0
            elif kind == "min":
                assert h2 > 0


def test_fiberclass_json():
    cls = stationary_points(FiberingCoefficients(A=1.0, B=1.0, C=1.0, p=5.0, a=0.0))
    d = cls.to_json_dict()
    assert d["lambda_set"] == "positive"
    assert d["theta_set"] == "positive"
    assert d["roots"][0]["kind"] == "max"
