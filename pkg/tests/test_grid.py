import numpy as np
import pytest

from steepwell import (
    GridFunction,
    apply_laplacian,
    build_grid,
    gradient_dot,
    integrate,
    load_grid_function,
    make_well_fields,
    write_field_csv,
)
from steepwell.grid import FieldSpecError, GridError, evaluate_field_spec, stiffness_csr
from steepwell.thresholds import random_sine_field


def test_build_grid_1d_spacing():
    g = build_grid(1, (-2.0, 2.0), 5)
    assert g.spacing == (1.0,)
    assert np.allclose(g.axes[0], [-2, -1, 0, 1, 2])
    assert set(g.axes[0][g.boundary_mask]) == {-2.0, 2.0}

    g401 = build_grid(1, (-2.0, 2.0), 401)
    assert g401.spacing[0] == pytest.approx(0.01)


def test_build_grid_2d_counts():
    g = build_grid(2, [(-2.0, 2.0), (-2.0, 2.0)], [41, 41])
    assert g.n_nodes == 1681
    assert int(g.boundary_mask.sum()) == 160


def test_build_grid_rejects_bad_input():
    with pytest.raises(GridError):
        build_grid(1, (-2.0, 2.0), 2)
    with pytest.raises(GridError):
        build_grid(1, (2.0, -2.0), 5)
    with pytest.raises(GridError):
        build_grid(3, [(-1, 1)] * 3, [5, 5, 5])


def test_well_fields_values(grid401):
    f = make_well_fields(grid401, 1.0, 2.0, "constant 1.0", "radial_poly 1 0 -2")
    x = grid401.axes[0]
    i = int(np.argmin(np.abs(x - 1.5)))
    assert f.V.values[i] == pytest.approx(0.25)
    assert np.array_equal(f.omega_mask, np.abs(x) <= 1.0)
    # Q = 1 - 2 x^2 changes sign at |x| = 1/sqrt(2)
    assert f.Q.values[int(np.argmin(np.abs(x - 0.5)))] > 0
    assert f.Q.values[int(np.argmin(np.abs(x - 0.9)))] < 0


def test_well_fields_sign_violations(grid401):
    with pytest.raises(FieldSpecError):
        make_well_fields(grid401, 1.0, 2.0, "constant -1.0", "constant 1.0")
    with pytest.raises(FieldSpecError):
        # Q negative on the well, positive outside
        make_well_fields(grid401, 1.0, 2.0, "constant 1.0", "step_radius 1.0 -1.0 1.0")


def test_field_spec_primitives(grid401):
    g = grid401
    assert np.allclose(evaluate_field_spec("constant 2.5", g).values, 2.5)
    gauss = evaluate_field_spec("gaussian 2.0 0.5 0.1", g).values
    assert gauss.max() == pytest.approx(2.0, abs=1e-6)
    with pytest.raises(FieldSpecError):
        evaluate_field_spec("mystery 1 2", g)
    with pytest.raises(FieldSpecError):
        evaluate_field_spec("constant", g)


def test_integrate_constant_and_affine():
    g1 = build_grid(1, (-2.0, 2.0), 11)
    assert integrate(g1, np.ones(g1.shape)) == pytest.approx(4.0)
    g2 = build_grid(2, [(0.0, 1.0), (0.0, 1.0)], [9, 9])
    X, Y = g2.coords
    assert integrate(g2, X + Y) == pytest.approx(1.0, abs=1e-12)


def test_integrate_cos_squared():
    g = build_grid(1, (-1.0, 1.0), 401)
    vals = np.cos(np.pi * g.axes[0] / 2) ** 2
    assert integrate(g, vals) == pytest.approx(1.0, abs=1e-4)


def test_integrate_shape_mismatch(grid401):
    with pytest.raises(GridError):
        integrate(grid401, np.ones(7))


def test_quadrature_linearity(grid401, rng):
    u = rng.normal(size=grid401.shape)
    v = rng.normal(size=grid401.shape)
    a, b = 0.7, -1.3
    lhs = integrate(grid401, a * u + b * v)
    rhs = a * integrate(grid401, u) + b * integrate(grid401, v)
    assert lhs == pytest.approx(rhs, abs=1e-12 * (1 + abs(rhs)))


def test_laplacian_on_sine():
    g = build_grid(1, (0.0, 1.0), 201)
    x = g.axes[0]
    u = GridFunction(g, np.sin(np.pi * x))
    lap = apply_laplacian(g, u).values
    inner = g.interior_mask
    err = np.max(np.abs(lap[inner] - np.pi**2 * u.values[inner]))
    h = g.spacing[0]
    assert err <= np.pi**4 * h**2 / 12 * 1.5


def test_laplacian_stencil_value():
    g = build_grid(1, (0.0, 1.0), 3)
    u = GridFunction(g, np.array([0.0, 1.0, 0.0]))
    assert apply_laplacian(g, u).values[1] == pytest.approx(8.0)


def test_laplacian_zero_and_boundary_check(grid401):
    z = GridFunction(grid401, np.zeros(grid401.shape))
    assert not apply_laplacian(grid401, z).values.any()
    bad = GridFunction(grid401, np.ones(grid401.shape))
    with pytest.raises(GridError):
        apply_laplacian(grid401, bad)


@pytest.mark.parametrize("dim", [1, 2])
def test_green_identity(dim, rng):
    if dim == 1:
        g = build_grid(1, (-2.0, 2.0), 101)
    else:
        g = build_grid(2, [(-1.0, 1.0), (-1.0, 1.0)], [21, 21])
    for _ in range(5):
        u = random_sine_field(g, rng)
        v = random_sine_field(g, rng)
        lhs = integrate(g, u.values * apply_laplacian(g, v).values)
        rhs = integrate(g, gradient_dot(g, u, v))
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs), 1.0)


def test_stiffness_matches_matrix_free(rng):
    g = build_grid(2, [(-1.0, 1.0), (-1.0, 1.0)], [17, 17])
    u = random_sine_field(g, rng)
    A = stiffness_csr(g, g.interior_mask)
    via_matrix = A @ u.values[g.interior_mask]
    via_apply = apply_laplacian(g, u).values[g.interior_mask]
    assert np.allclose(via_matrix, via_apply, rtol=0, atol=1e-10)


@pytest.mark.parametrize("dim", [1, 2])
def test_field_csv_roundtrip(tmp_path, rng, dim):
    if dim == 1:
        g = build_grid(1, (-2.0, 2.0), 41)
    else:
        g = build_grid(2, [(-1.0, 1.0), (0.0, 2.0)], [9, 11])
    u = random_sine_field(g, rng)
    path = tmp_path / "u.csv"
    write_field_csv(path, g, {"u": u.values})
    back = load_grid_function(path)
    assert back.grid.shape == g.shape
    assert np.allclose(back.values, u.values, rtol=0, atol=0)
