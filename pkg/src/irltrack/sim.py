"""Closed-loop simulation of identification plus critic learning.

Time stepping follows a split scheme on a fixed grid t_i = i * dt:

* the continuous block (plant state, regressor/state filters, Gram
  integrals) is advanced by classical RK4 with the control held constant
  over the step and the plant parameters frozen at their step-start values,
  so parameter switches take effect exactly on grid points;
* both weight estimates (identifier and critic) take one forward-Euler step
  using derivatives evaluated at the step start;
* the critic's sample window is appended once per grid point, and critic
  updates stay at zero until the window first spans [t - T, t].

Each grid point contributes one diagnostics row; a run over `duration`
seconds therefore produces duration/dt + 1 rows.  Everything is
deterministic given the configuration (the seed only enters through optional
random probe phases), and any non-finite state aborts the run.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from . import models
from .critic import (
    CriticBasis,
    CriticState,
    GainConfig,
    TRACKING_POLY7,
    critic_update_parts,
    delta_theta,
    m_vector,
    sigma_and_indicator,
    stabilizing_term,
)
from .errors import ConfigError, NumericalError
from .identifier import (
    IdentifierBasis,
    IdentifierState,
    ReplayStack,
    _jacobi_min_eig,
    update_derivative,
)
from .models import ParameterSchedule, params_at
from .policy import SaturationSpec, control
from .policy import q_cost as _q_cost
from .policy import tau as _tau
from .policy import utility_closed

# monitor tolerance for "nondecreasing" stored-excitation levels; absorbs the
# eigensolver's floating-point floor
_LAM_SLACK = 1e-12


@dataclass(frozen=True)
class ProbeSpec:
    """Exploration signal added to the control before clipping.

    The probe is amplitude * sum_i sin(2 pi f_i t + phase_i).  Phases default
    to zero; with random_phases they are drawn once per run from the seed.
    """

    enabled: bool = False
    amplitude: float = 0.0
    frequencies: tuple[float, ...] = (1.1, 2.3, 3.7)
    random_phases: bool = False
    phases: tuple[float, ...] = ()

    def __post_init__(self):
        if self.amplitude < 0.0:
            raise ConfigError(f"probe amplitude must be >= 0, got {self.amplitude}")
        if self.enabled and not self.frequencies:
            raise ConfigError("an enabled probe needs at least one frequency")
        if any(f <= 0.0 for f in self.frequencies):
            raise ConfigError("probe frequencies must be positive")
        if self.phases and len(self.phases) != len(self.frequencies):
            raise ConfigError("phases, when given, must match frequencies")


@dataclass(frozen=True)
class SimConfig:
    """Grid and probe settings: step dt (s), duration (s), seed, probe."""

    dt: float
    duration: float
    seed: int = 0
    probe: ProbeSpec = ProbeSpec()

    def __post_init__(self):
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        n = round(self.duration / self.dt)
        if n < 1 or abs(self.duration - n * self.dt) > 1e-9:
            raise ConfigError(
                f"duration {self.duration} must be a positive multiple of dt={self.dt}"
            )

    @property
    def n_steps(self) -> int:
        return round(self.duration / self.dt)


@dataclass(frozen=True)
class RunSetup:
    """Everything a run needs, already validated and in runtime form."""

    schedule: ParameterSchedule
    x1d: float
    ref_gain: float
    basis: IdentifierBasis
    k_f: float
    l_f: float
    gamma1: Union[float, np.ndarray]
    er_enabled: bool
    stack_size: int
    snapshot_period: float
    gains: GainConfig
    q_weight: Union[float, np.ndarray]
    sat: SaturationSpec
    w_init: np.ndarray
    w1_init: np.ndarray
    sim: SimConfig
    critic_basis: CriticBasis = TRACKING_POLY7
    x0: tuple[float, ...] = (0.0, 0.0)


@dataclass
class SimState:
    """Full mutable state of one run.

    The continuous block lives in the flat vector y; x, phi_f, x_f, pi and
    kmat of the identifier are views into it so RK4 advances everything in
    one shot.
    """

    y: np.ndarray
    x: np.ndarray
    ident: IdentifierState
    critic: CriticState
    stack: Optional[ReplayStack]
    t: float = 0.0


@dataclass
class RunRecord:
    """One run's output: column names, per-grid-point rows, summary metrics."""

    header: tuple[str, ...]
    rows: np.ndarray
    metrics: dict


def probe_signal(t: float, probe: ProbeSpec) -> float:
    """Probe value at time t; zero when disabled."""
    if not probe.enabled or probe.amplitude == 0.0:
        return 0.0
    phases = probe.phases if probe.phases else (0.0,) * len(probe.frequencies)
    two_pi = 2.0 * math.pi
    s = 0.0
    for f, ph in zip(probe.frequencies, phases):
        s += math.sin(two_pi * f * t + ph)
    return probe.amplitude * s


def _resolve_probe(probe: ProbeSpec, seed: int) -> ProbeSpec:
    """Fix the probe phases for a run; randomness only enters here."""
    if probe.enabled and probe.random_phases and not probe.phases:
        rng = np.random.default_rng(seed)
        phases = tuple(float(p) for p in rng.uniform(0.0, 2.0 * math.pi, len(probe.frequencies)))
        return replace(probe, phases=phases)
    return probe


def make_header(setup: RunSetup) -> tuple[str, ...]:
    """CSV column names for this setup's dimensions."""
    n1 = setup.critic_basis.n_features
    kn = setup.basis.size * setup.basis.n_states
    return (
        "t",
        "x1",
        "x2",
        "x1d",
        "x2d",
        "u",
        "z1",
        "z2",
        "e_hjb",
        "sigma",
        "xi",
        *(f"W{i}" for i in range(1, n1 + 1)),
        *(f"Wi{i}" for i in range(1, kn + 1)),
        "g_tilde_norm",
        "lambda_min_P",
    )


def init_state(setup: RunSetup) -> SimState:
    """Initial state: plant at rest at the origin, filters and Gram at zero.

    The identifier starts from w1_init.  With no probe the loop can only
    bootstrap itself if the initial input-gain estimate is nonzero (a zero
    estimate gives zero control, which in turn leaves the input direction
    of the regressor permanently unexcited), so benchmark configurations
    seed that entry with a deliberately wrong but sign-correct prior.
    """
    k = setup.basis.size
    n = setup.basis.n_states
    if setup.w1_init.shape != (k, n):
        raise ConfigError(
            f"w1_init must have shape ({k}, {n}), got {setup.w1_init.shape}"
        )
    if len(setup.x0) != n:
        raise ConfigError(f"x0 must have {n} components, got {len(setup.x0)}")
    o1, o2, o3 = n, n + k, 2 * n + k
    o4 = o3 + k * k
    o5 = o4 + k * n
    y = np.zeros(o5)
    y[0:n] = setup.x0
    ident = IdentifierState(
        w_hat=np.array(setup.w1_init, dtype=float),
        phi_f=y[o1:o2],
        x_f=y[o2:o3],
        pi=y[o3:o4].reshape(k, k),
        kmat=y[o4:o5].reshape(k, n),
    )
    critic = CriticState(
        w0=setup.w_init,
        dt=setup.sim.dt,
        t_win=setup.gains.T,
        gamma=setup.gains.gamma,
        z_dim=2,
    )
    stack = ReplayStack(setup.stack_size, setup.snapshot_period) if setup.er_enabled else None
    return SimState(y=y, x=y[0:o1], ident=ident, critic=critic, stack=stack)


def _continuous_derivative(y: np.ndarray, u_vec: np.ndarray, p, setup: RunSetup) -> np.ndarray:
    """Derivative of the packed continuous block (x, phi_f, x_f, Pi, K)."""
    basis = setup.basis
    k = basis.size
    n = basis.n_states
    o2, o3 = n + k, 2 * n + k
    o4 = o3 + k * k
    dy = np.empty_like(y)
    x = y[0:n]
    dy[0] = y[1]
    dy[1] = models.plant_accel(y[0], y[1], u_vec[0], p)
    phi = np.concatenate((basis.xi1(x), basis.xi2(x) @ u_vec))
    phi_f = y[n:o2]
    dy[n:o2] = (phi - phi_f) / setup.k_f
    x_f_dot = (x - y[o2:o3]) / setup.k_f
    dy[o2:o3] = x_f_dot
    pi = y[o3:o4].reshape(k, k)
    dy[o3:o4] = (np.outer(phi_f, phi_f) - setup.l_f * pi).ravel()
    kmat = y[o4:].reshape(k, n)
    dy[o4:] = (np.outer(phi_f, x_f_dot) - setup.l_f * kmat).ravel()
    return dy


def _advance_continuous(state: SimState, u_vec: np.ndarray, p, setup: RunSetup):
    """One RK4 step of the continuous block with zero-order-hold control."""
    dt = setup.sim.dt
    y = state.y
    k1 = _continuous_derivative(y, u_vec, p, setup)
    k2 = _continuous_derivative(y + (0.5 * dt) * k1, u_vec, p, setup)
    k3 = _continuous_derivative(y + (0.5 * dt) * k2, u_vec, p, setup)
    k4 = _continuous_derivative(y + dt * k3, u_vec, p, setup)
    y += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _observe(state: SimState, t: float, setup: RunSetup, row: np.ndarray, probe: ProbeSpec):
    """Evaluate all time-t signals, append the critic sample, fill the row.

    Returns what the weight updates and the integrator need:
    (u_vec, params, e_hjb, d_theta, xi, stab, m_int, phi_norm, tbar_norm).
    d_theta and stab are None while the window is still filling.
    """
    basis = setup.basis
    cbasis = setup.critic_basis
    sat = setup.sat
    gains = setup.gains
    critic = state.critic
    ident = state.ident
    w = critic.w

    p = params_at(setup.schedule, t)
    x1 = state.y[0]
    x2 = state.y[1]
    x2d = models.reference(x1, setup.x1d, 0.0, setup.ref_gain)
    z1 = x2 - x2d
    z2 = x2d
    theta = cbasis.theta(z1, z2)
    grad = cbasis.grad_theta(z1, z2)

    # identified input gain, mapped into the tracking coordinates
    g_hat = ident.w_hat[basis.k_w1 :, :].T @ basis.xi2(state.x)  # (n, m)
    g_aug = np.zeros_like(g_hat)
    g_aug[0, :] = g_hat[1, :]

    tau2 = _tau(w, g_aug, grad, sat)
    u_hat = control(tau2, sat)
    pr = probe_signal(t, probe)
    u_vec = np.clip(u_hat + pr, -sat.u_m, sat.u_m)
    z = np.array((z1, z2))

    integrand = _q_cost(z, setup.q_weight) + utility_closed(tau2, sat)
    mv = m_vector(grad, g_aug, tau2, sat)
    critic.append(t, z, theta, grad, u_hat, integrand, mv)

    z_dot = critic.z_dot_estimate()
    if z_dot is None:
        sigma, xi = 0.0, 1.0
        sig_vec = None
    else:
        sigma, xi = sigma_and_indicator(w, grad, z_dot)
        sig_vec = grad @ z_dot

    if critic.ready:
        th_old, th_new = critic.endpoint_thetas()
        d_theta = delta_theta(th_new, th_old, gains.gamma, gains.T)
        e = critic.cost_integral() + float(np.dot(w, d_theta))
        stab = stabilizing_term(w, grad, g_aug, z_dot, tau2, sat)
        m_int = critic.m_window_integral(w)
        nd = float(np.linalg.norm(d_theta))
        m_s = 1.0 + nd * nd
        phi_norm = nd / m_s
        tbar_norm = phi_norm / m_s
    else:
        d_theta = None
        e = 0.0
        stab = None
        m_int = 0.0
        phi_norm = 0.0
        tbar_norm = 0.0

    # diagnostics: distance of the identified gain from truth, and the
    # excitation level of live plus stored information
    g_true = models.plant_input_gain(p)
    g_err = float(np.linalg.norm(g_true - g_hat))
    if state.stack is None or len(state.stack) == 0:
        pmat = ident.pi
    else:
        pmat = ident.pi + state.stack.sum_pi
    lam_p, off = _jacobi_min_eig(pmat.copy(), 1e-10, 100)
    if off > 1e-10:
        raise NumericalError(f"excitation eigensolve stalled at t={t}")

    n1 = w.size
    row[0] = t
    row[1] = x1
    row[2] = x2
    row[3] = setup.x1d
    row[4] = x2d
    row[5] = u_vec[0]
    row[6] = z1
    row[7] = z2
    row[8] = e
    row[9] = sigma
    row[10] = xi
    row[11 : 11 + n1] = w
    row[11 + n1 : 11 + n1 + ident.w_hat.size] = ident.w_hat.ravel()
    row[-2] = g_err
    row[-1] = lam_p
    return u_vec, p, e, d_theta, xi, stab, m_int, phi_norm, tbar_norm, sig_vec


def step(
    state: SimState,
    t: float,
    setup: RunSetup,
    row: Optional[np.ndarray] = None,
    probe: Optional[ProbeSpec] = None,
):
    """Advance the full state from t to t + dt.

    Fills `row` (when given) with the time-t diagnostics row and returns
    (critic ||W_dot||, ||phi||, ||theta_bar||) for that step; the norms are 0
    while the critic window is still filling.  Weight updates use
    start-of-step derivatives; the continuous block then moves under the
    held control.
    """
    if row is None:
        row = np.empty(11 + state.critic.w.size + state.ident.w_hat.size + 2)
    if probe is None:
        probe = _resolve_probe(setup.sim.probe, setup.sim.seed)
    dt = setup.sim.dt
    critic = state.critic
    ident = state.ident

    res = _observe(state, t, setup, row, probe)
    u_vec, p, e, d_theta, xi, stab, m_int, phi_n, tb_n, sig_vec = res

    if d_theta is not None:
        base, gated = critic_update_parts(critic, setup.gains, e, d_theta, xi, stab, m_int)
        dw = dt * base
        if xi != 0.0 and sig_vec is not None:
            # the stabilizer is gated by sigma = W.T (grad_theta z_dot) >= 0;
            # if this Euler step would cross sigma = 0, the continuous law
            # switches the term off at the crossing, so integrate it only up
            # to that instant (sigma is linear in W, crossing time is exact)
            sigma0 = float(critic.w @ sig_vec)
            rate = float((base + gated) @ sig_vec)
            if sigma0 + dt * rate < 0.0 and rate < 0.0:
                dw += max(0.0, -sigma0 / rate) * gated
            else:
                dw += dt * gated
        critic.w = critic.w + dw
        w_dot_norm = float(np.linalg.norm(dw)) / dt
    else:
        w_dot_norm = 0.0

    w1_dot = update_derivative(ident, state.stack, setup.gamma1)
    ident.w_hat += dt * w1_dot

    if state.stack is not None:
        state.stack.maybe_record(ident.pi, ident.kmat, t)

    _advance_continuous(state, u_vec, p, setup)
    state.t = t + dt
    return w_dot_norm, phi_n, tb_n


def run(setup: RunSetup) -> RunRecord:
    """Simulate the full configured run and collect rows plus metrics."""
    sim = setup.sim
    if setup.stack_size < setup.basis.size:
        raise ConfigError(
            f"replay stack of {setup.stack_size} cannot span the "
            f"{setup.basis.size}-dimensional regressor"
        )
    dt = sim.dt
    n_steps = sim.n_steps
    probe = _resolve_probe(sim.probe, sim.seed)
    state = init_state(setup)
    header = make_header(setup)
    rows = np.empty((n_steps + 1, len(header)))
    w_dot_norms = np.zeros(n_steps)
    w_norm_max = float(np.linalg.norm(state.critic.w))
    phi_norm_max = 0.0
    theta_bar_norm_max = 0.0
    pi_sym_max = 0.0
    pi_eig_min = 0.0
    er_events: list[tuple[float, float]] = []
    er_violations = 0

    t_start = time.perf_counter()
    for i in range(n_steps):
        t = i * dt
        if state.stack is not None:
            prev_len = len(state.stack)
            prev_lam = state.stack.lam_min

        w_dot_norms[i], phi_n, tb_n = step(state, t, setup, rows[i], probe)

        if phi_n > phi_norm_max:
            phi_norm_max = phi_n
        if tb_n > theta_bar_norm_max:
            theta_bar_norm_max = tb_n

        if state.stack is not None and (
            len(state.stack) != prev_len or state.stack.lam_min != prev_lam
        ):
            er_events.append((t, state.stack.lam_min))
            if state.stack.lam_min < prev_lam - _LAM_SLACK:
                er_violations += 1

        if not (
            np.isfinite(state.y).all()
            and np.isfinite(state.ident.w_hat).all()
            and np.isfinite(state.critic.w).all()
        ):
            raise NumericalError(f"non-finite state after step {i} (t={t:.6f})")
        pi = state.ident.pi
        sym = float(np.abs(pi - pi.T).max())
        if sym > pi_sym_max:
            pi_sym_max = sym
        lam_pi, _ = _jacobi_min_eig(pi.copy(), 1e-10, 100)
        if lam_pi < pi_eig_min:
            pi_eig_min = lam_pi
        wn = float(np.linalg.norm(state.critic.w))
        if wn > w_norm_max:
            w_norm_max = wn

    _observe(state, n_steps * dt, setup, rows[n_steps], probe)
    runtime = time.perf_counter() - t_start

    metrics = _summarize(
        rows,
        setup,
        runtime,
        w_dot_norms,
        w_norm_max,
        phi_norm_max,
        theta_bar_norm_max,
        pi_sym_max,
        pi_eig_min,
        er_events,
        er_violations,
        state,
    )
    return RunRecord(header=header, rows=rows, metrics=metrics)


def _segment_bounds(schedule: ParameterSchedule, duration: float):
    starts = [s for s, _ in schedule.segments if s < duration]
    ends = starts[1:] + [duration]
    return list(zip(starts, ends))


def _summarize(
    rows,
    setup,
    runtime,
    w_dot_norms,
    w_norm_max,
    phi_norm_max,
    theta_bar_norm_max,
    pi_sym_max,
    pi_eig_min,
    er_events,
    er_violations,
    state,
) -> dict:
    sim = setup.sim
    t = rows[:, 0]
    x1 = rows[:, 1]
    u = rows[:, 5]
    g_err = rows[:, -2]
    n1 = state.critic.w.size

    bounds = _segment_bounds(setup.schedule, sim.duration)
    seg_x1, seg_g = [], []
    for lo, hi in bounds:
        closed = hi >= sim.duration
        m_x = (t >= max(lo, hi - 3.0)) & ((t <= hi) if closed else (t < hi))
        m_g = (t >= max(lo, hi - 2.0)) & ((t <= hi) if closed else (t < hi))
        seg_x1.append(float(np.mean(np.abs(x1[m_x] - setup.x1d))))
        seg_g.append(float(np.mean(g_err[m_g])))

    # settling: when the weight trajectory has come to rest near its endpoint
    w_cols = rows[:, 11 : 11 + n1]
    w_end = w_cols[-1]
    dev = np.linalg.norm(w_cols - w_end, axis=1)
    thresh = max(0.05 * float(np.linalg.norm(w_end)), 1e-6)
    future_max = np.maximum.accumulate(dev[::-1])[::-1]
    inside = future_max <= thresh
    settling_time = float(t[int(np.argmax(inside))]) if inside.any() else float(sim.duration)

    dt = sim.dt
    n5 = min(round(5.0 / dt), len(w_dot_norms))
    first5 = float(np.mean(w_dot_norms[:n5])) if n5 else 0.0
    final5 = float(np.mean(w_dot_norms[-n5:])) if n5 else 0.0
    settle_ratio = final5 / first5 if first5 > 0 else 0.0

    w1_err = None
    if setup.basis.true_weights is not None:
        p_end = params_at(setup.schedule, sim.duration)
        w1_true = setup.basis.true_weights(p_end)
        w1_err = float(np.linalg.norm(w1_true - state.ident.w_hat))

    return {
        "rows": int(rows.shape[0]),
        "dt": dt,
        "duration": sim.duration,
        "seed": sim.seed,
        "runtime_s": float(runtime),
        "max_abs_u": float(np.abs(u).max()),
        "u_bound": float(setup.sat.u_m),
        "segment_bounds": [[float(a), float(b)] for a, b in bounds],
        "seg_tail_x1_err": seg_x1,
        "seg_tail_g_err": seg_g,
        "final_g_err": float(g_err[-1]),
        "final_w1_err_fro": w1_err,
        "critic_w_norm_max": float(w_norm_max),
        "critic_wdot_first5_mean": first5,
        "critic_wdot_final5_mean": final5,
        "critic_settle_ratio": float(settle_ratio),
        "critic_settling_time": settling_time,
        "phi_norm_max": float(phi_norm_max),
        "theta_bar_norm_max": float(theta_bar_norm_max),
        "pi_sym_err_max": float(pi_sym_max),
        "pi_min_eig_min": float(pi_eig_min),
        "er_accepted": len(er_events),
        "er_lambda_min_violations": int(er_violations),
        "er_lambda_min_final": float(state.stack.lam_min) if state.stack is not None else 0.0,
        "er_events": [[float(a), float(b)] for a, b in er_events],
        "lambda_min_P_final": float(rows[-1, -1]),
    }
