"""Saturated-policy unit tests.

The closed-form saturation penalty is fuzzed against adaptive quadrature of
its defining integral, and the two structural properties used by the
stability argument (nonnegativity; the squashed-control distance bound) are
checked on random batches. Frozen oracle values below were computed once
with mpmath at 50 digits.
"""

import math

import numpy as np
import pytest

from irltrack.errors import ConfigError, DomainError
from irltrack.policy import (
    SaturationSpec,
    control,
    q_cost,
    tanh_diff_bound,
    tau,
    utility_closed,
    utility_quadrature,
)

SAT1 = SaturationSpec(u_m=2.0, r_diag=np.array([1.0]))


def test_spec_validation():
    with pytest.raises(ConfigError):
        SaturationSpec(u_m=0.0, r_diag=np.array([1.0]))
    with pytest.raises(ConfigError):
        SaturationSpec(u_m=2.0, r_diag=np.array([1.0, -1.0]))
    assert SAT1.n_inputs == 1


def test_control_is_strictly_bounded():
    rng = np.random.default_rng(2)
    t2 = rng.normal(scale=10.0, size=1000)
    u = control(t2, SAT1)
    # tanh rounds to exactly 1.0 in float64 for |arg| > ~19, so <= at the tails
    assert (np.abs(u) <= 2.0).all()
    small = rng.uniform(-5.0, 5.0, size=1000)
    assert (np.abs(control(small, SAT1)) < 2.0).all()
    assert np.sign(u[0]) == -np.sign(t2[0])


def test_tau_linear_in_weights():
    grad = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.0]])
    g_aug = np.array([[0.5], [0.0]])
    w = np.array([1.0, -1.0, 0.25])
    t2 = tau(w, g_aug, grad, SAT1)
    # grad_v = grad.T w = (1.5, -1); tau2 = g_aug.T grad_v / (2 u_m R) = 0.75/4
    assert t2.shape == (1,)
    assert t2[0] == pytest.approx(0.1875, abs=1e-12)
    assert tau(2.0 * w, g_aug, grad, SAT1)[0] == pytest.approx(0.375, abs=1e-12)


def test_utility_closed_frozen_values():
    # u_m=2, R=1: mpmath (50 digits) of the defining integral, which agrees
    # with the antiderivative 2 u_m^2 R (tau2 tanh(tau2) - log cosh(tau2))
    assert utility_closed(np.array([1.0]), SAT1) == pytest.approx(
        2.6225066037819016, rel=1e-12
    )
    assert utility_closed(np.array([-0.5]), SAT1) == pytest.approx(
        0.8875525733738188, rel=1e-12
    )
    assert utility_closed(np.array([0.0]), SAT1) == 0.0


def test_closed_form_matches_quadrature_fuzz():
    # identity used by the Bellman integrand: closed form equals the integral
    rng = np.random.default_rng(42)
    for m in (1, 2, 3):
        spec = SaturationSpec(u_m=2.0, r_diag=rng.uniform(0.5, 2.0, size=m))
        worst = 0.0
        for _ in range(2_000):
            t2 = rng.uniform(-3.0, 3.0, size=m)
            closed = utility_closed(t2, spec)
            quad = utility_quadrature(control(t2, spec), spec, tol=1e-12)
            worst = max(worst, abs(closed - quad) / max(abs(quad), 1e-30))
        assert worst < 1e-8


def test_utility_nonnegative_fuzz():
    rng = np.random.default_rng(1)
    for _ in range(10_000):
        m = int(rng.integers(1, 4))
        spec = SaturationSpec(u_m=2.0, r_diag=rng.uniform(0.2, 3.0, size=m))
        t2 = rng.normal(scale=3.0, size=m)
        assert utility_closed(t2, spec) >= 0.0


def test_quadrature_domain_error_at_bound():
    with pytest.raises(DomainError):
        utility_quadrature(np.array([2.0]), SAT1)


def test_tanh_difference_bound_fuzz():
    rng = np.random.default_rng(8)
    for _ in range(10_000):
        m = int(rng.integers(1, 4))
        a = rng.normal(scale=4.0, size=m)
        b = rng.normal(scale=4.0, size=m)
        lhs, tm = tanh_diff_bound(a, b)
        assert lhs <= tm + 1e-12
        assert tm <= 2.0 * math.sqrt(m) + 1e-12


def test_q_cost_forms():
    z = np.array([0.5, -2.0])
    assert q_cost(z, 1.0) == pytest.approx(0.25)
    assert q_cost(z, 4.0) == pytest.approx(1.0)
    # matrix form penalizes the leading block only
    assert q_cost(z, np.array([[2.0]])) == pytest.approx(0.5)
