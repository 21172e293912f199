"""Shared fixtures: the unit-pi domain, the three shipped coefficient sets,
and single-mode sources with declared partials."""

import math

import numpy as np
import pytest

from anisolab.coefficients import (CoefficientField, ScalarField,
                                   SourceField, as_field)
from anisolab.spaces import TensorDomain, build_space

PI = math.pi
NORM = 2.0 / PI  # L2 normalization of sin(x1) sin(x2) on (0, pi)^2


@pytest.fixture(scope="session")
def dom():
    return TensorDomain((0.0, PI), (0.0, PI))


@pytest.fixture(scope="session")
def A_identity():
    return CoefficientField.identity()


@pytest.fixture(scope="session")
def A_offdiag_const():
    # constant coupling 0.3; pointwise smallest eigenvalue is 0.7
    return CoefficientField(1.0, 0.3, 0.3, 1.0, lam=0.7,
                            offdiag_mixed_deriv_in_l2=True)


@pytest.fixture(scope="session")
def A_offdiag_variable():
    # coupling 0.2 sin(x1) sin(x2); pointwise smallest eigenvalue >= 0.8
    g = ScalarField(lambda x1, x2: 0.2 * np.sin(x1) * np.sin(x2),
                    {"x1", "x2"},
                    dx1=as_field(lambda x1, x2: 0.2 * np.cos(x1) * np.sin(x2)),
                    dx2=as_field(lambda x1, x2: 0.2 * np.sin(x1) * np.cos(x2)),
                    label="0.2*sin(x1)*sin(x2)")
    return CoefficientField(1.0, g, g, 1.0, lam=0.8,
                            offdiag_mixed_deriv_in_l2=True)


def mode_source(j: int, k: int, amplitude: float = 1.0) -> SourceField:
    """L2-normalized tensor sine mode as a source, with declared x1-partial."""
    amp = amplitude * NORM

    def f(x1, x2):
        return amp * np.sin(j * x1) * np.sin(k * x2)

    def df(x1, x2):
        return amp * j * np.cos(j * x1) * np.sin(k * x2)

    return SourceField(as_field(f, label=f"mode({j},{k})"),
                       dx1=as_field(df),
                       grad_x1_in_l2=True, slices_vanish_x1=True)


@pytest.fixture(scope="session")
def f_mode11():
    return mode_source(1, 1)


@pytest.fixture(scope="session")
def sine8(dom):
    return build_space(dom, "sine", 8, "sine", 8)


@pytest.fixture(scope="session")
def sine16(dom):
    return build_space(dom, "sine", 16, "sine", 16)


@pytest.fixture(scope="session")
def q1_8(dom):
    return build_space(dom, "q1", 8, "q1", 8)
