"""Saturation-aware control policy and running-cost pieces.

The control is read off a value-function estimate through a tanh squash,

    tau2 = R^-1 @ G_hat.T @ grad_theta.T @ W_hat / (2 u_m)
    u_hat = -u_m * tanh(tau2)

which keeps |u_hat| strictly inside the bound u_m.  The matching control
penalty is the saturation integral

    U(u) = 2 u_m * integral_0^u atanh(nu / u_m).T @ R dnu

whose closed form at u = -u_m*tanh(tau2) is

    U = 2 u_m^2 tau2.T @ R @ tanh(tau2) + u_m^2 * sum_i R_ii * log(1 - tanh(tau2_i)^2)

utility_closed evaluates that closed form; utility_quadrature integrates the
definition directly (adaptive Simpson) and exists as an independent check of
the closed form, not as a runtime path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError

# floor for 1 - tanh^2 before the log; the exact value underflows to 0 only
# for |tau2| beyond roughly 355
_SECH2_FLOOR = 1e-300


@dataclass(frozen=True)
class SaturationSpec:
    """Actuator bound u_m (N) and diagonal control penalty R (per input)."""

    u_m: float
    r_diag: np.ndarray

    def __post_init__(self):
        if not (math.isfinite(self.u_m) and self.u_m > 0.0):
            raise ConfigError(f"u_m must be finite and positive, got {self.u_m}")
        r = np.atleast_1d(np.asarray(self.r_diag, dtype=float))
        if r.ndim != 1 or r.size < 1:
            raise ConfigError("r_diag must be a nonempty vector")
        if not (np.isfinite(r).all() and (r > 0.0).all()):
            raise ConfigError("control penalty entries must be finite and positive")
        object.__setattr__(self, "r_diag", r)

    @property
    def n_inputs(self) -> int:
        return self.r_diag.size


def tau(w: np.ndarray, g_aug: np.ndarray, grad_theta: np.ndarray, spec: SaturationSpec) -> np.ndarray:
    """Pre-squash control argument tau2, shape (n_inputs,)."""
    grad_v = grad_theta.T @ w  # value-function gradient in z, (z_dim,)
    return (g_aug.T @ grad_v) / (2.0 * spec.u_m * spec.r_diag)


def control(tau2: np.ndarray, spec: SaturationSpec) -> np.ndarray:
    """Saturated control u_hat = -u_m tanh(tau2), strictly inside the bound."""
    return -spec.u_m * np.tanh(tau2)


def utility_closed(tau2: np.ndarray, spec: SaturationSpec) -> float:
    """Saturation penalty evaluated at u = -u_m tanh(tau2), in closed form."""
    um2 = spec.u_m * spec.u_m
    if spec.r_diag.size == 1:
        # scalar path, hot in the simulation loop
        t = float(tau2[0]) if np.ndim(tau2) else float(tau2)
        r = spec.r_diag[0]
        try:
            sech2 = 1.0 / math.cosh(t) ** 2
        except OverflowError:
            sech2 = 0.0
        return um2 * r * (2.0 * t * math.tanh(t) + math.log(max(sech2, _SECH2_FLOOR)))
    tau2 = np.atleast_1d(np.asarray(tau2, dtype=float))
    th = np.tanh(tau2)
    with np.errstate(over="ignore"):
        sech2 = 1.0 / np.cosh(tau2) ** 2
    sech2 = np.maximum(sech2, _SECH2_FLOOR)
    quad = 2.0 * um2 * float(np.dot(tau2 * spec.r_diag, th))
    log_part = um2 * float(np.dot(spec.r_diag, np.log(sech2)))
    return quad + log_part


def _adaptive_simpson(f, a: float, b: float, tol: float) -> float:
    """Recursive adaptive Simpson quadrature to absolute tolerance tol."""
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, fa, b, fb, m, fm, whole, tol, depth):
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        if depth > 48 or abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        half = 0.5 * tol
        return recurse(a, fa, m, fm, lm, flm, left, half, depth + 1) + recurse(
            m, fm, b, fb, rm, frm, right, half, depth + 1
        )

    return recurse(a, fa, b, fb, m, fm, whole, tol, 0)


def utility_quadrature(u: np.ndarray, spec: SaturationSpec, tol: float = 1e-10) -> float:
    """Saturation penalty from its defining integral, componentwise.

    Valid for |u_i| < u_m; the integrand diverges at the bound.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    um = spec.u_m
    total = 0.0
    for ui, ri in zip(u, spec.r_diag):
        if abs(ui) >= um:
            raise DomainError(f"|u|={abs(ui)} is outside the open bound ({um})")
        if ui == 0.0:
            continue
        total += 2.0 * um * ri * _adaptive_simpson(lambda nu: math.atanh(nu / um), 0.0, float(ui), tol)
    return total


def q_cost(z, q) -> float:
    """Tracking-error cost e.T @ Q @ e on the error block of z.

    A scalar q penalizes the first component of z; a (p, p) matrix penalizes
    the first p components.  The reference block of z is free.
    """
    if isinstance(q, float):
        e = float(z[0])
        return q * e * e
    z = np.atleast_1d(np.asarray(z, dtype=float))
    qa = np.asarray(q, dtype=float)
    if qa.ndim == 0:
        e = z[0]
        return float(qa) * e * e
    p = qa.shape[0]
    e = z[:p]
    return float(e @ qa @ e)


def tanh_diff_bound(tau_a: np.ndarray, tau_b: np.ndarray):
    """Distance between two squashed controls and its saturation-aware bound.

    Returns (||tanh(tau_a) - tanh(tau_b)||, T_m) with
    T_m = sqrt(sum_i min(|tau_a_i - tau_b_i|^2, 4)); the first never exceeds
    the second, and T_m <= 2 sqrt(m).
    """
    tau_a = np.atleast_1d(np.asarray(tau_a, dtype=float))
    tau_b = np.atleast_1d(np.asarray(tau_b, dtype=float))
    lhs = float(np.linalg.norm(np.tanh(tau_a) - np.tanh(tau_b)))
    d2 = (tau_a - tau_b) ** 2
    tm = float(np.sqrt(np.sum(np.minimum(d2, 4.0))))
    return lhs, tm
