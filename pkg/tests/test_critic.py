"""Critic unit tests.

Feature gradients are checked against central differences, the window
integrals against plain trapezoid sums computed here, and the normalizer
bounds against their analytic maxima (attained at ||d_theta|| = 1 and
1/sqrt(3) respectively).
"""

import math

import numpy as np
import pytest

from irltrack.critic import (
    TRACKING_POLY7,
    CriticState,
    GainConfig,
    check_gains,
    critic_update_derivative,
    critic_update_parts,
    delta_theta,
    hjb_error,
    m_vector,
    normalizers,
    sigma_and_indicator,
    stabilizing_term,
    uub_gamma,
)
from irltrack.errors import ConfigError, DomainError
from irltrack.policy import SaturationSpec


def test_grad_matches_central_differences():
    basis = TRACKING_POLY7
    rng = np.random.default_rng(4)
    h = 1e-6
    for _ in range(30):
        z1, z2 = rng.uniform(-2, 2, size=2)
        g = basis.grad_theta(z1, z2)
        num1 = (basis.theta(z1 + h, z2) - basis.theta(z1 - h, z2)) / (2 * h)
        num2 = (basis.theta(z1, z2 + h) - basis.theta(z1, z2 - h)) / (2 * h)
        assert np.allclose(g[:, 0], num1, atol=1e-6)
        assert np.allclose(g[:, 1], num2, atol=1e-6)


def test_delta_theta_definition():
    now = np.arange(7.0)
    then = np.ones(7)
    d = delta_theta(now, then, gamma=0.1, t_win=0.05)
    assert np.allclose(d, math.exp(-0.005) * now - then, atol=1e-15)


def test_normalizer_bounds_attained():
    # ||phi|| peaks at ||d|| = 1, ||theta_bar|| at ||d|| = 1/sqrt(3)
    d = np.zeros(7)
    d[0] = 1.0
    _, phi, _ = normalizers(d)
    assert np.linalg.norm(phi) == pytest.approx(0.5, abs=1e-15)
    d[0] = 1.0 / math.sqrt(3.0)
    _, _, tbar = normalizers(d)
    assert np.linalg.norm(tbar) == pytest.approx(9.0 / (16.0 * math.sqrt(3.0)), abs=1e-15)


def test_normalizer_bounds_fuzz():
    rng = np.random.default_rng(6)
    cap_phi = 0.5
    cap_tb = 9.0 / (16.0 * math.sqrt(3.0))
    for _ in range(5000):
        d = rng.normal(scale=rng.uniform(0.01, 50.0), size=7)
        m_s, phi, tbar = normalizers(d)
        assert m_s >= 1.0
        assert np.linalg.norm(phi) <= cap_phi + 1e-12
        assert np.linalg.norm(tbar) <= cap_tb + 1e-12


def test_check_gains_boundary():
    # with K1 = kappa1 * ones(n), M1 is PD iff lambda_min(K2 - K1 K1^T/4) > 0
    n = 7
    k1 = np.full(n, 0.2)
    assert check_gains(k1, np.eye(n) * 0.08) > 0.0
    # 7 * 0.04 / 4 = 0.07 is the exact singular boundary
    assert abs(check_gains(k1, np.eye(n) * 0.07)) < 1e-12
    assert check_gains(k1, np.eye(n) * 0.05) < 0.0
    with pytest.raises(ConfigError):
        check_gains(k1, np.eye(3))


def test_gain_config_validation():
    k1 = np.full(7, 0.15)
    good = GainConfig(alpha=20.0, k2=1.0, l=0.5, K1=k1, K2=np.eye(7) * 0.06,
                      gamma=0.1, T=0.05)
    assert good.alpha == 20.0
    with pytest.raises(ConfigError):
        GainConfig(alpha=20.0, k2=1.0, l=0.5, K1=k1, K2=np.zeros((7, 7)),
                   gamma=0.1, T=0.05)


def test_uub_gamma_endpoints_and_domain():
    assert uub_gamma(0.0) == pytest.approx(1.0, abs=1e-15)
    top = 3.0 - 2.0 * math.sqrt(2.0)
    # sqrt branch point at the domain edge limits accuracy to ~sqrt(eps)
    assert uub_gamma(top) == pytest.approx((1.0 - top) / 2.0, abs=1e-7)
    with pytest.raises(DomainError):
        uub_gamma(-0.1)
    with pytest.raises(DomainError):
        uub_gamma(0.2)


def test_sigma_gate():
    w = np.array([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
    grad = TRACKING_POLY7.grad_theta(0.5, -0.2)
    up = np.array([1.0, 0.0])
    sig, xi = sigma_and_indicator(w, grad, up)
    assert sig == pytest.approx(1.0)
    assert xi == 1.0
    sig, xi = sigma_and_indicator(w, grad, -up)
    assert sig == pytest.approx(-1.0)
    assert xi == 0.0


def _window_state(w0, dt=1e-3, t_win=0.05, gamma=0.1):
    basis = TRACKING_POLY7
    sat = SaturationSpec(u_m=2.0, r_diag=np.array([1.0]))
    state = CriticState(w0=w0, dt=dt, t_win=t_win, gamma=gamma)
    g_aug = np.array([[0.5], [0.0]])
    zs = []
    for i in range(int(round(t_win / dt)) + 1):
        t = i * dt
        z1 = 0.3 * math.sin(3.0 * t) + 0.1
        z2 = 0.2 * math.cos(2.0 * t)
        theta = basis.theta(z1, z2)
        grad = basis.grad_theta(z1, z2)
        tau2 = np.array([0.4 * z1])
        integrand = z1 * z1 + 0.1 * tau2[0] ** 2  # any smooth running cost
        mv = m_vector(grad, g_aug, tau2, sat)
        state.append(t, np.array([z1, z2]), theta, grad, np.array([0.0]), integrand, mv)
        zs.append((t, theta, integrand, mv))
    return state, zs


def test_window_integrals_match_trapezoid_oracle():
    state, zs = _window_state(np.zeros(7))
    assert state.ready
    t_end = zs[-1][0]
    gamma, t_win = 0.1, 0.05
    wts = np.array([math.exp(-gamma * (t - t_end + t_win)) for t, _, _, _ in zs])
    integrands = np.array([c for _, _, c, _ in zs])
    dt = 1e-3
    oracle = np.trapezoid(wts * integrands, dx=dt)
    assert state.cost_integral() == pytest.approx(oracle, rel=1e-12)

    w = np.arange(7.0) / 7.0
    m_rows = np.array([mv for _, _, _, mv in zs])
    oracle_m = np.trapezoid(wts * (m_rows @ w), dx=dt)
    assert state.m_window_integral(w) == pytest.approx(oracle_m, rel=1e-10)


def test_hjb_error_is_cost_plus_weighted_difference():
    state, zs = _window_state(np.ones(7) * 0.3)
    e = hjb_error(state)
    theta_then, theta_now = state.endpoint_thetas()
    d = delta_theta(theta_now, theta_then, 0.1, 0.05)
    expected = state.cost_integral() + float(state.w @ d)
    assert e == pytest.approx(expected, rel=1e-12)


def test_z_dot_estimate_uses_last_two_samples():
    state, zs = _window_state(np.zeros(7))
    zd = state.z_dot_estimate()
    # finite difference of the synthetic trajectory at the window end
    t1 = zs[-1][0]
    t0 = zs[-2][0]
    z1a, z2a = 0.3 * math.sin(3 * t0) + 0.1, 0.2 * math.cos(2 * t0)
    z1b, z2b = 0.3 * math.sin(3 * t1) + 0.1, 0.2 * math.cos(2 * t1)
    assert zd == pytest.approx(np.array([(z1b - z1a), (z2b - z2a)]) / 1e-3, rel=1e-9)


def test_update_parts_sum_to_full_derivative():
    gains = GainConfig(alpha=20.0, k2=1.0, l=0.5, K1=np.full(7, 0.15),
                       K2=np.eye(7) * 0.06, gamma=0.1, T=0.05)
    state, _ = _window_state(np.ones(7) * 0.2)
    d = np.linspace(-0.3, 0.4, 7)
    stab = np.linspace(0.1, -0.2, 7)
    for xi in (0.0, 1.0):
        base, gated = critic_update_parts(state, gains, 0.7, d, xi, stab, 0.05)
        full = critic_update_derivative(state, gains, 0.7, d, xi, stab, 0.05)
        assert np.allclose(base + gated, full, atol=1e-15)
        if xi == 0.0:
            assert np.allclose(gated, 0.0)


def test_constant_gain_mode():
    # k2 = 0 turns |e|^k2 into 1, so the learning gain is constant 1 + l
    k1 = np.full(7, 0.15)
    g_var = GainConfig(alpha=20.0, k2=0.0, l=1.0, K1=k1, K2=np.eye(7) * 0.06,
                       gamma=0.1, T=0.05)
    state, _ = _window_state(np.ones(7) * 0.2)
    d = np.linspace(-0.3, 0.4, 7)
    for e in (0.01, 0.5, 3.0):
        b1, _ = critic_update_parts(state, g_var, e, d, 0.0, np.zeros(7), 0.0)
        b2, _ = critic_update_parts(state, g_var, -e, d, 0.0, np.zeros(7), 0.0)
        # gain (|e|^0 + l) = 2 regardless of e; flipping e only flips the
        # gradient-descent drive, not the damping terms
        _, phi, tbar = normalizers(d)
        drive = -20.0 * 2.0 * e * tbar
        assert np.allclose(b1 - b2, 2.0 * drive, rtol=1e-12)


def test_stabilizing_term_shape_and_descent_structure():
    basis = TRACKING_POLY7
    sat = SaturationSpec(u_m=2.0, r_diag=np.array([1.0]))
    grad = basis.grad_theta(0.4, -0.1)
    g_aug = np.array([[0.5], [0.0]])
    w = np.linspace(-1, 1, 7)
    z_dot = np.array([0.3, -0.2])
    tau2 = np.array([0.7])
    s = stabilizing_term(w, grad, g_aug, z_dot, tau2, sat)
    assert s.shape == (7,)
    sech2 = 1.0 - math.tanh(0.7) ** 2
    gg = grad @ g_aug
    expected = 0.5 * sech2 * (gg @ (gg.T @ w)) - grad @ z_dot
    assert np.allclose(s, expected, atol=1e-12)
