import numpy as np
import pytest

from steepwell import (
    ProblemData,
    build_grid,
    make_well_fields,
    principal_eig_full,
    principal_eig_omega,
)


@pytest.fixture(scope="session")
def grid401():
    return build_grid(1, (-2.0, 2.0), 401)


@pytest.fixture(scope="session")
def fields_default(grid401):
    """f = 1, Q = 1 - 2 x^2 on the [-2, 2] box with well (-1, 1)."""
    return make_well_fields(grid401, 1.0, 2.0, "constant 1.0", "radial_poly 1 0 -2")


@pytest.fixture(scope="session")
def fields_band_q(grid401):
    """Q = 2 x^2 - 0.3: negative core, positive band; flips the sign of the
    weighted fifth-power integral of the principal eigenfunction."""
    return make_well_fields(grid401, 1.0, 2.0, "constant 1.0", "radial_poly -0.3 0 2")


@pytest.fixture(scope="session")
def fields_qconst(grid401):
    return make_well_fields(grid401, 1.0, 2.0, "constant 1.0", "constant 1.0")


@pytest.fixture(scope="session")
def eig_omega(grid401, fields_default):
    return principal_eig_omega(fields_default, grid401)


@pytest.fixture(scope="session")
def lam1(eig_omega):
    return eig_omega.eigenvalue


@pytest.fixture(scope="session")
def lam_tilde_1e4(grid401, fields_default, lam1):
    problem = ProblemData(
        grid=grid401, fields=fields_default, a=1.0, p=5.0, lam=0.5 * lam1, mu=1e4
    )
    return principal_eig_full(problem).eigenvalue


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
