"""Plant, reference, and tracking-state models for the spring-damper benchmark.

The plant is a unit-mass-normalized nonlinear spring damper

    x1_dot = x2
    x2_dot = -(k/m) x1^3 - (c/m) x2 + (1/m) u

with piecewise-constant physical parameters so runs can switch stiffness and
mass mid-experiment.  The tracking objective is a position setpoint turned
into a velocity command x2d = x1d_dot - gain*(x1 - x1d); the controller works
in the augmented coordinates z = (x2 - x2d, x2d).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, NumericalError


@dataclass(frozen=True)
class PlantParams:
    """Physical parameters of one schedule segment.

    Attributes
    ----------
    mass : float
        m in kg, must be positive.
    spring : float
        Cubic spring coefficient k in N/m.
    damping : float
        Viscous damping c in N*s/m.
    """

    mass: float
    spring: float
    damping: float

    def __post_init__(self):
        if not (math.isfinite(self.mass) and self.mass > 0.0):
            raise ConfigError(f"mass must be finite and > 0, got {self.mass}")
        if not (math.isfinite(self.spring) and math.isfinite(self.damping)):
            raise ConfigError("spring and damping must be finite")


@dataclass(frozen=True)
class ParameterSchedule:
    """Piecewise-constant plant parameters over time.

    segments is a tuple of (start_time, PlantParams); the first start time
    must be 0 and start times must be strictly increasing.  Each segment is
    left-closed, right-open; the last segment extends forever.
    """

    segments: tuple[tuple[float, PlantParams], ...]

    def __post_init__(self):
        if not self.segments:
            raise ConfigError("schedule needs at least one segment")
        starts = [s for s, _ in self.segments]
        if starts[0] != 0.0:
            raise ConfigError(f"first segment must start at t=0, got {starts[0]}")
        for a, b in zip(starts, starts[1:]):
            if not b > a:
                raise ConfigError("segment start times must be strictly increasing")


@dataclass(frozen=True)
class PlantState:
    """Plant state: position x1 (m) and velocity x2 (m/s)."""

    x1: float
    x2: float


@dataclass(frozen=True)
class AugmentedState:
    """Tracking coordinates z1 = x2 - x2d (velocity error) and z2 = x2d."""

    z1: float
    z2: float


def params_at(schedule: ParameterSchedule, t: float) -> PlantParams:
    """Parameters in force at time t (left-closed, right-open segments)."""
    if t < 0.0:
        raise DomainError(f"schedule is defined for t >= 0, got t={t}")
    current = schedule.segments[0][1]
    for start, params in schedule.segments:
        if t >= start:
            current = params
        else:
            break
    return current


def plant_accel(x1: float, x2: float, u: float, p: PlantParams) -> float:
    """Acceleration (-k x1^3 - c x2 + u) / m of the spring-damper plant."""
    return (-p.spring * x1 ** 3 - p.damping * x2 + u) / p.mass


def plant_derivative(x, u: float, p: PlantParams) -> np.ndarray:
    """Time derivative (x1_dot, x2_dot) of the spring-damper plant.

    Parameters
    ----------
    x : PlantState or length-2 sequence
        Current state.
    u : float
        Applied force in N.
    p : PlantParams
        Parameters of the active segment.
    """
    if isinstance(x, PlantState):
        x1, x2 = x.x1, x.x2
    else:
        x1, x2 = float(x[0]), float(x[1])
    if not (math.isfinite(x1) and math.isfinite(x2) and math.isfinite(u)):
        raise NumericalError(f"non-finite plant input: x=({x1}, {x2}), u={u}")
    return np.array((x2, plant_accel(x1, x2, u, p)))


def plant_input_gain(p: PlantParams) -> np.ndarray:
    """True input gain g(x) = (0, 1/m) of the plant, shape (2, 1)."""
    return np.array(((0.0,), (1.0 / p.mass,)))


def reference(x1: float, x1d: float, x1d_dot: float, gain: float = 5.0) -> float:
    """Velocity command x2d = x1d_dot - gain*(x1 - x1d) steering x1 to x1d."""
    return x1d_dot - gain * (x1 - x1d)


def augment(x, x2d: float) -> AugmentedState:
    """Augmented tracking state z = (x2 - x2d, x2d)."""
    x2 = x.x2 if isinstance(x, PlantState) else float(x[1])
    return AugmentedState(z1=x2 - x2d, z2=x2d)


def augmented_g(ghat: np.ndarray) -> np.ndarray:
    """Input gain of the augmented dynamics.

    z1_dot inherits the plant's velocity-channel gain and z2_dot is driven
    purely by the reference, so a per-state gain estimate (g1, g2) (one
    column per input) maps to rows (g2, 0).
    """
    g = np.atleast_2d(np.asarray(ghat, dtype=float))
    if g.shape[0] == 1 and g.size > 1:
        # a flat (g1, g2) vector means one input
        g = g.T
    if g.shape[0] != 2:
        raise DomainError(f"expected a gain for each of 2 states, got shape {g.shape}")
    out = np.zeros_like(g)
    out[0, :] = g[1, :]
    return out
