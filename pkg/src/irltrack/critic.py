"""Critic-only value learning over a sliding integral window.

The value estimate is V_hat(z) = W.T @ theta(z) on a fixed polynomial basis.
Instead of point-wise Bellman residuals, learning uses the discounted
integral form over a window [t - T, t]:

    e_hjb = integral_{t-T}^{t} exp(-gamma (tau - t + T)) (q_cost + U) dtau
            + W.T @ (exp(-gamma T) theta(t) - theta(t - T))

which needs no drift model.  The update combines a normalized gradient step
on e_hjb, a stabilizing direction active only when the value estimate is not
already decreasing along the trajectory (indicator Xi), damping gains
(K1, K2), and a window integral of the saturation mismatch vector M:

    W_dot = -alpha (|e|^k2 + l) theta_bar e
            + alpha Xi (grad_theta @ G R^-1 (I - B) G.T @ grad_theta.T @ W / 2
                         - grad_theta @ z_dot)
            + alpha (|e|^k2 + l) ((K1 phi.T - K2) W
                                   - theta_bar * integral exp(-gamma (tau-t+T)) W.T M dtau)

with B = diag(tanh(tau2)^2), phi = d_theta / m_s, theta_bar = d_theta / m_s^2,
m_s = 1 + d_theta.T d_theta.  |e|^0 is taken as 1 even at e = 0, so k2 = 0
gives a constant learning gain.  z_dot is a backward difference of the stored
trajectory; the W inside the M integral is the current estimate, so the
integral reduces to a weighted sum of stored M vectors dotted with W.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, DomainError
from .identifier import min_eig_sym
from .policy import SaturationSpec

_UUB_GAMMA_MAX = 3.0 - 2.0 * math.sqrt(2.0)


@dataclass(frozen=True)
class CriticBasis:
    """Value-function features theta(z) and their Jacobian grad_theta(z)."""

    name: str
    n_features: int
    z_dim: int
    theta: Callable[[float, float], np.ndarray]
    grad_theta: Callable[[float, float], np.ndarray]


def _poly7_theta(z1: float, z2: float) -> np.ndarray:
    return np.array((z1, z2, z1 * z1, z2 * z2, z1 * z2, z1 * z1 * z1, z2 * z2 * z2))


def _poly7_grad(z1: float, z2: float) -> np.ndarray:
    return np.array(
        (
            (1.0, 0.0),
            (0.0, 1.0),
            (2.0 * z1, 0.0),
            (0.0, 2.0 * z2),
            (z2, z1),
            (3.0 * z1 * z1, 0.0),
            (0.0, 3.0 * z2 * z2),
        )
    )


TRACKING_POLY7 = CriticBasis(
    name="tracking_poly7",
    n_features=7,
    z_dim=2,
    theta=_poly7_theta,
    grad_theta=_poly7_grad,
)


def check_gains(k1: np.ndarray, k2mat: np.ndarray) -> float:
    """Smallest eigenvalue of the damping-gain test matrix.

    The update's damping terms are jointly stabilizing when

        M1 = [[1,        -K1.T / 2],
              [-K1 / 2,   K2      ]]

    is positive definite; returns lambda_min(M1) so callers can reject
    non-positive configurations.
    """
    k1 = np.atleast_1d(np.asarray(k1, dtype=float))
    k2mat = np.asarray(k2mat, dtype=float)
    n = k1.size
    if k2mat.shape != (n, n):
        raise ConfigError(f"K2 must be ({n}, {n}) to match K1, got {k2mat.shape}")
    m = np.empty((n + 1, n + 1))
    m[0, 0] = 1.0
    m[0, 1:] = -0.5 * k1
    m[1:, 0] = -0.5 * k1
    m[1:, 1:] = k2mat
    # min_eig_sym rejects an asymmetric K2 block for us
    return min_eig_sym(m)


@dataclass(frozen=True)
class GainConfig:
    """Critic learning gains.

    alpha : base learning rate (> 0)
    k2    : adaptation exponent on |e_hjb| (>= 0; 0 means constant gain)
    l     : gain floor in (0, 1]
    K1    : (N1,) damping vector
    K2    : (N1, N1) symmetric damping matrix
    gamma : discount rate (>= 0)
    T     : window length in seconds (> 0)
    """

    alpha: float
    k2: float
    l: float
    K1: np.ndarray
    K2: np.ndarray
    gamma: float
    T: float

    def __post_init__(self):
        if not (math.isfinite(self.alpha) and self.alpha > 0.0):
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if not (math.isfinite(self.k2) and self.k2 >= 0.0):
            raise ConfigError(f"k2 must be >= 0, got {self.k2}")
        if not (0.0 < self.l <= 1.0):
            raise ConfigError(f"l must lie in (0, 1], got {self.l}")
        if not (math.isfinite(self.gamma) and self.gamma >= 0.0):
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if not (math.isfinite(self.T) and self.T > 0.0):
            raise ConfigError(f"window length must be positive, got {self.T}")
        k1 = np.atleast_1d(np.asarray(self.K1, dtype=float))
        k2m = np.asarray(self.K2, dtype=float)
        object.__setattr__(self, "K1", k1)
        object.__setattr__(self, "K2", k2m)
        lam = check_gains(k1, k2m)
        if lam <= 0.0:
            raise ConfigError(
                f"damping gains fail the positivity test (lambda_min = {lam:.3e}); "
                "decrease K1 or increase K2"
            )


def delta_theta(theta_now: np.ndarray, theta_then: np.ndarray, gamma: float, t_win: float) -> np.ndarray:
    """Discounted feature difference exp(-gamma T) theta(t) - theta(t - T)."""
    return math.exp(-gamma * t_win) * theta_now - theta_then


def normalizers(d_theta: np.ndarray):
    """Normalization terms (m_s, phi, theta_bar) for a feature difference.

    m_s = 1 + d_theta.T d_theta, phi = d_theta / m_s, theta_bar = d_theta / m_s^2.
    ||phi|| is at most 1/2 and ||theta_bar|| at most 9 / (16 sqrt(3)).
    """
    m_s = 1.0 + float(np.dot(d_theta, d_theta))
    phi = d_theta / m_s
    theta_bar = phi / m_s
    return m_s, phi, theta_bar


class CriticState:
    """Critic weights plus the sliding sample window behind the integrals.

    The window holds one sample per integration step covering exactly
    [t - T, t] once full; until then updates are skipped.  Ring buffers keep
    appends cheap; chronological traversal starts at `head` when full.
    """

    def __init__(self, w0: np.ndarray, dt: float, t_win: float, gamma: float, z_dim: int = 2):
        w0 = np.array(w0, dtype=float)
        if w0.ndim != 1:
            raise ConfigError("critic weights must be a vector")
        n_sub = round(t_win / dt)
        if n_sub < 1 or abs(t_win - n_sub * dt) > 1e-9:
            raise ConfigError(f"window length {t_win} must be a positive multiple of dt={dt}")
        self.w = w0
        self.dt = float(dt)
        self.t_win = float(t_win)
        self.gamma = float(gamma)
        self.n_slots = n_sub + 1
        n1 = w0.size
        self.ts = np.full(self.n_slots, np.nan)
        self.zs = np.zeros((self.n_slots, z_dim))
        self.thetas = np.zeros((self.n_slots, n1))
        self.grads = np.zeros((self.n_slots, n1, z_dim))
        self.us = np.zeros((self.n_slots, 1))
        self.qus = np.zeros(self.n_slots)
        self.ms = np.zeros((self.n_slots, n1))
        self.head = 0  # next write slot; oldest slot when full
        self.count = 0
        # discounted trapezoid weights over the window, oldest sample first
        k = np.arange(self.n_slots, dtype=float)
        trap = np.full(self.n_slots, dt)
        trap[0] = trap[-1] = 0.5 * dt
        self._quad_w = trap * np.exp(-gamma * k * dt)

    @property
    def ready(self) -> bool:
        """True once the window spans the full [t - T, t] interval."""
        return self.count == self.n_slots

    def append(self, t, z, theta, grad, u_hat, integrand, m_vec):
        """Store one sample; integrand is q_cost + utility at this instant."""
        h = self.head
        self.ts[h] = t
        self.zs[h] = z
        self.thetas[h] = theta
        self.grads[h] = grad
        self.us[h] = u_hat
        self.qus[h] = integrand
        self.ms[h] = m_vec
        self.head = (h + 1) % self.n_slots
        if self.count < self.n_slots:
            self.count += 1

    def _split_dot(self, buf: np.ndarray) -> float:
        # chronological dot of the quad weights with a full ring buffer
        h = self.head
        w = self._quad_w
        k = self.n_slots - h
        return float(np.dot(w[:k], buf[h:])) + float(np.dot(w[k:], buf[:h]))

    def _slot(self, age: int) -> int:
        # ring index of the sample `age` steps before the newest
        return (self.head - 1 - age) % self.n_slots

    def newest(self, age: int = 0):
        """(t, z, theta) of the sample `age` steps back from the newest."""
        i = self._slot(age)
        return self.ts[i], self.zs[i], self.thetas[i]

    def endpoint_thetas(self):
        """(theta(t - T), theta(t)) or None before the window is full."""
        if not self.ready:
            return None
        return self.thetas[self.head], self.thetas[self._slot(0)]

    def cost_integral(self) -> Optional[float]:
        """Discounted trapezoid of the stored cost integrand, None if short."""
        if not self.ready:
            return None
        return self._split_dot(self.qus)

    def m_window_integral(self, w: np.ndarray) -> Optional[float]:
        """Discounted trapezoid of W.T @ M with the current weights outside."""
        if not self.ready:
            return None
        return self._split_dot(self.ms @ w)

    def z_dot_estimate(self) -> Optional[np.ndarray]:
        """Backward difference of the two newest stored z samples."""
        if self.count < 2:
            return None
        return (self.zs[self._slot(0)] - self.zs[self._slot(1)]) / self.dt


def hjb_error(state: CriticState) -> Optional[float]:
    """Windowed Bellman residual, or None before the first full window."""
    if not state.ready:
        return None
    th_old, th_new = state.endpoint_thetas()
    d_theta = delta_theta(th_new, th_old, state.gamma, state.t_win)
    return state.cost_integral() + float(np.dot(state.w, d_theta))


def sigma_and_indicator(w: np.ndarray, grad: np.ndarray, z_dot: np.ndarray):
    """Derivative of the value estimate along the trajectory and its gate.

    Returns (sigma, xi) with sigma = W.T @ grad_theta @ z_dot and xi = 0
    when sigma < 0 (value already decreasing, stabilizer off) else 1.
    """
    sigma = float(w @ (grad @ z_dot))
    return sigma, (0.0 if sigma < 0.0 else 1.0)


def stabilizing_term(
    w: np.ndarray,
    grad: np.ndarray,
    g_aug: np.ndarray,
    z_dot: np.ndarray,
    tau2: np.ndarray,
    spec: SaturationSpec,
) -> np.ndarray:
    """Direction that decreases the value estimate along the trajectory."""
    grad_g = grad @ g_aug  # (N1, m)
    inner = grad_g.T @ w  # (m,)
    th2 = np.tanh(tau2) ** 2
    stab = 0.5 * (grad_g @ ((1.0 - th2) / spec.r_diag * inner))
    return stab - grad @ z_dot


def m_vector(grad: np.ndarray, g_aug: np.ndarray, tau2: np.ndarray, spec: SaturationSpec) -> np.ndarray:
    """Saturation mismatch direction grad_theta @ G u_m (tanh(tau2) - sign(tau2))."""
    return (grad @ g_aug) @ (spec.u_m * (np.tanh(tau2) - np.sign(tau2)))


def critic_update_parts(
    state: CriticState,
    gains: GainConfig,
    e: float,
    d_theta: np.ndarray,
    xi: float,
    stab: np.ndarray,
    m_integral: float,
):
    """Weight derivative split as (always-on part, gated stabilizer part).

    The split exists for the integrator: the stabilizer switches off the
    moment the value estimate stops growing, so its contribution within a
    step has to be cut at that crossing rather than applied in full.
    """
    _, phi, theta_bar = normalizers(d_theta)
    gain = abs(e) ** gains.k2 + gains.l
    w = state.w
    damp = gains.K1 * float(np.dot(phi, w)) - gains.K2 @ w
    base = gains.alpha * (
        -gain * e * theta_bar + gain * (damp - m_integral * theta_bar)
    )
    return base, gains.alpha * xi * stab


def critic_update_derivative(
    state: CriticState,
    gains: GainConfig,
    e: float,
    d_theta: np.ndarray,
    xi: float,
    stab: np.ndarray,
    m_integral: float,
) -> np.ndarray:
    """Weight derivative of the windowed critic update law."""
    base, gated = critic_update_parts(state, gains, e, d_theta, xi, stab, m_integral)
    return base + gated


def uub_gamma(gamma1: float) -> float:
    """Contraction factor 0.5 (1 - gamma1) + sqrt(0.25 (1 - gamma1)^2 - gamma1).

    Defined for 0 <= gamma1 <= 3 - sqrt(8), where the discriminant is
    nonnegative; equals 1 at gamma1 = 0 and decreases to (1 - gamma1)/2 at
    the upper end.
    """
    if not (0.0 <= gamma1 <= _UUB_GAMMA_MAX + 1e-12):
        raise DomainError(
            f"gamma1 must lie in [0, {_UUB_GAMMA_MAX:.6f}], got {gamma1}"
        )
    disc = 0.25 * (1.0 - gamma1) ** 2 - gamma1
    return 0.5 * (1.0 - gamma1) + math.sqrt(max(disc, 0.0))
