"""Shared fixtures.

The Hopf normal form is the workhorse oracle for unit tests: with an
additive input in the x equation it has closed-form phase and amplitude
responses (isochrons are radial lines, so the phase response is
-sin(theta)/r0 and the amplitude response is radial), and its slow
Floquet exponent is exactly -2 mu.
"""

import numpy as np
import pytest

from reentrain.dynamics import (VectorField, IntegratorOptions, find_limit_cycle,
                                monodromy_floquet, adjoint_response_curves)

# mu is kept small so the slow Floquet multiplier exp(-2 mu T) stays above
# the negligible-mode cutoff and the amplitude coordinate is retained
HOPF_MU = 0.25
HOPF_OMEGA = 2.0 * np.pi / 5.0


def make_hopf(mu=HOPF_MU, omega=HOPF_OMEGA):
    def rhs(x, p, t, u):
        a, b = x
        r2 = a * a + b * b
        return np.array([(mu - r2) * a - omega * b + p + u,
                         (mu - r2) * b + omega * a])

    def jac(x, p, t):
        a, b = x
        r2 = a * a + b * b
        return np.array([[mu - r2 - 2.0 * a * a, -omega - 2.0 * a * b],
                         [omega - 2.0 * a * b, mu - r2 - 2.0 * b * b]])

    return VectorField(dimension=2, rhs=rhs, delta=np.array([1.0, 0.0]),
                       jacobian=jac, name="hopf", anchor=("peak", 0))


def make_hopf_radial(mu=HOPF_MU, omega=HOPF_OMEGA):
    """Variant whose parameter moves the orbit radially (p adds to mu).

    The orbit sensitivity is then purely radial: D is identically zero, Q
    is constant in theta, and kappa(p) = -2 (mu + p) exactly.
    """
    def rhs(x, p, t, u):
        a, b = x
        r2 = a * a + b * b
        return np.array([(mu + p - r2) * a - omega * b + u,
                         (mu + p - r2) * b + omega * a])

    def jac(x, p, t):
        a, b = x
        r2 = a * a + b * b
        return np.array([[mu + p - r2 - 2.0 * a * a, -omega - 2.0 * a * b],
                         [omega - 2.0 * a * b, mu + p - r2 - 2.0 * b * b]])

    return VectorField(dimension=2, rhs=rhs, delta=np.array([1.0, 0.0]),
                       jacobian=jac, name="hopf-radial", anchor=("peak", 0))


@pytest.fixture(scope="session")
def hopf_field():
    return make_hopf()


@pytest.fixture(scope="session")
def hopf_family():
    from reentrain.family import build_family
    return build_family(make_hopf_radial(), np.linspace(-0.02, 0.02, 5))


@pytest.fixture(scope="session")
def hopf_cycle(hopf_field):
    opts = IntegratorOptions(rtol=1e-10, atol=1e-10)
    cyc = find_limit_cycle(hopf_field, 0.0, np.array([1.0, 0.1]), opts=opts)
    monodromy_floquet(cyc, hopf_field, opts=opts)
    adjoint_response_curves(cyc, hopf_field, opts=opts)
    return cyc
