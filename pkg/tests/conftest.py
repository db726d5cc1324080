import numpy as np
import pytest

import fbsde_kit as fk


@pytest.fixture(scope="session")
def example36():
    return fk.build_builtin("example36")


@pytest.fixture(scope="session")
def example36_field_coarse(example36):
    field, diag = fk.build_decoupling_field(example36, nx=101, nt_total=50, quad=5)
    return field, diag


def coupled_two_component_problem(offdiag_sign=1.0):
    """A 2-component diagonal-driver problem with tunable y-coupling sign."""

    def f1(t, x, y, z):
        return x - y[..., 0] + offdiag_sign * np.tanh(y[..., 1]) - z[..., 0]

    def f2(t, x, y, z):
        return x - y[..., 1] + offdiag_sign * np.tanh(y[..., 0]) - z[..., 0]

    return fk.FBSDEProblem(
        n=2, d=1, T=1.0, x0=0.5,
        b=lambda t, x, y: -0.5 * (y[..., 0] + y[..., 1]),
        sigma=fk.constant_sigma(1.0, 1),
        f=[f1, f2],
        h=lambda x: np.stack([np.asarray(x, float), 0.5 * np.asarray(x, float)], axis=-1),
        K=2.0,
    )
