import numpy as np
import pytest

from steepwell import (
    GridFunction,
    ProblemData,
    dirichlet_norm_sq,
    energy,
    energy_gradient,
    mu_norm_sq,
    q_power_term,
    weighted_mass,
)
from steepwell.functionals import assemble_energy, directional_derivative, quad_inner
from steepwell.thresholds import random_sine_field


@pytest.fixture()
def problem(grid401, fields_default, lam1):
    return ProblemData(
        grid=grid401, fields=fields_default, a=0.5, p=5.0, lam=0.5 * lam1, mu=1e4
    )


def cos_profile(grid):
    x = grid.axes[0]
    vals = np.where(np.abs(x) <= 1.0, np.cos(np.pi * x / 2), 0.0)
    return GridFunction(grid, vals)


def test_dirichlet_norm_of_cos(grid401):
    u = cos_profile(grid401)
    assert dirichlet_norm_sq(u) == pytest.approx((np.pi / 2) ** 2, abs=1e-3)


def test_dirichlet_scaling(grid401, rng):
    u = random_sine_field(grid401, rng)
    u2 = u.copy_with(2 * u.values)
    assert dirichlet_norm_sq(u2) == pytest.approx(4 * dirichlet_norm_sq(u), rel=1e-13)


def test_dirichlet_zero(grid401):
    z = GridFunction(grid401, np.zeros(grid401.shape))
    assert dirichlet_norm_sq(z) == 0.0


def test_mu_norm_on_well_support(grid401, problem):
    u = cos_profile(grid401)  # supported where V = 0
    assert mu_norm_sq(u, problem) == pytest.approx(dirichlet_norm_sq(u), rel=1e-14)


def test_mu_norm_linear_in_mu(grid401, fields_default, lam1, rng):
    u = random_sine_field(grid401, rng)
    pb1 = ProblemData(grid=grid401, fields=fields_default, a=0.5, p=5.0, lam=0.0, mu=100.0)
    pb2 = ProblemData(grid=grid401, fields=fields_default, a=0.5, p=5.0, lam=0.0, mu=200.0)
    dn2 = dirichlet_norm_sq(u)
    part1 = mu_norm_sq(u, pb1) - dn2
    part2 = mu_norm_sq(u, pb2) - dn2
    assert part2 == pytest.approx(2 * part1, rel=1e-12)


def test_weighted_mass_normalization(grid401, fields_default):
    u = cos_profile(grid401)
    assert weighted_mass(u, fields_default.f) == pytest.approx(1.0, abs=1e-4)
    assert weighted_mass(GridFunction(grid401, np.zeros(grid401.shape)), fields_default.f) == 0.0


def test_weighted_mass_sign(grid401, rng):
    u = random_sine_field(grid401, rng)
    w = np.abs(rng.normal(size=grid401.shape))
    assert weighted_mass(u, w) >= 0.0


def test_q_power_term(grid401, fields_qconst, rng):
    pb = ProblemData(grid=grid401, fields=fields_qconst, a=0.5, p=2.5, lam=0.0, mu=1.0)
    z = GridFunction(grid401, np.zeros(grid401.shape))
    assert q_power_term(z, pb) == 0.0
    u = random_sine_field(grid401, rng)
    assert q_power_term(u.copy_with(np.abs(u.values)), pb) == pytest.approx(
        q_power_term(u, pb), rel=1e-14
    )


def test_energy_assembly_arithmetic():
    eb = assemble_energy(a=1.0, p=4.0, lam=1.0, dnorm4=1.0, munorm2=1.0, q_term=1.0, f_term=0.0)
    assert eb.J == pytest.approx(0.5)


def test_energy_even(problem, grid401, rng):
    u = random_sine_field(grid401, rng)
    assert energy(u, problem).J == pytest.approx(
        energy(u.copy_with(-u.values), problem).J, rel=1e-14
    )
    z = GridFunction(grid401, np.zeros(grid401.shape))
    assert energy(z, problem).J == 0.0


def test_gradient_zero_at_zero(problem, grid401):
    z = GridFunction(grid401, np.zeros(grid401.shape))
    assert not energy_gradient(z, problem).values.any()


def test_gradient_rejects_small_p(grid401, fields_default):
    with pytest.raises(ValueError):
        ProblemData(grid=grid401, fields=fields_default, a=0.5, p=1.5, lam=0.0, mu=1.0)


@pytest.mark.parametrize("p", [2.5, 3.0, 4.0, 5.0])
def test_gradient_matches_finite_differences(grid401, fields_default, lam1, p, rng):
    problem = ProblemData(
        grid=grid401, fields=fields_default, a=0.3, p=p, lam=0.5 * lam1, mu=100.0
    )
    for _ in range(5):
        u = random_sine_field(grid401, rng)
        v = random_sine_field(grid401, rng)
        g = energy_gradient(u, problem)
        inner = quad_inner(grid401, g, v)
        for eps in (1e-4, 1e-5):
            fd = directional_derivative(u, v, problem, eps=eps)
            assert abs(fd - inner) <= 1e-6 * (1 + abs(fd))


def test_gap_inequality(grid401, fields_default, lam1, lam_tilde_1e4, rng):
    lam = 0.5 * lam_tilde_1e4
    problem = ProblemData(
        grid=grid401, fields=fields_default, a=0.5, p=5.0, lam=lam, mu=1e4
    )
    for _ in range(200):
        u = random_sine_field(grid401, rng)
        mun2 = mu_norm_sq(u, problem)
        B = mun2 - lam * weighted_mass(u, fields_default.f)
        bound = (lam_tilde_1e4 - lam) / lam_tilde_1e4 * mun2
        assert B >= bound - 1e-10 * mun2


def test_homogeneity_power_laws(problem, grid401, rng):
    u = random_sine_field(grid401, rng)
    t = 1.7
    e1 = energy(u, problem)
    e2 = energy(u.copy_with(t * u.values), problem)
    assert e2.dnorm4 == pytest.approx(t**4 * e1.dnorm4, rel=1e-12)
    assert e2.munorm2 == pytest.approx(t**2 * e1.munorm2, rel=1e-12)
    assert e2.q_term == pytest.approx(t**problem.p * e1.q_term, rel=1e-12)
    assert e2.f_term == pytest.approx(t**2 * e1.f_term, rel=1e-12)


def test_energy_json_round(problem, grid401, rng):
    u = random_sine_field(grid401, rng)
    d = energy(u, problem).to_json_dict()
    assert set(d) == {"dnorm4", "munorm2", "q_term", "f_term", "J"}
