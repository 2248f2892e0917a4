"""Experiment configuration: JSON schema, validation, and RunSetup assembly.

The config file is a single JSON document with a versioned schema. Unknown
keys anywhere in the tree are rejected with their full field path, so a
typo in a gain name fails loudly instead of silently using a default.
All values live in plain Python containers (tuples, floats, ints, bools),
which makes parse(serialize(cfg)) == cfg hold exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .critic import GainConfig, TRACKING_POLY7
from .errors import ConfigError
from .identifier import BASES
from .models import ParameterSchedule, PlantParams
from .policy import SaturationSpec
from .sim import ProbeSpec, RunSetup, SimConfig

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PlantSection:
    # schedule rows are (t_start, m, k, c), left-closed segments
    schedule: tuple[tuple[float, float, float, float], ...]
    x0: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class ReferenceSection:
    x1d: float = 1.0
    gain: float = 5.0


@dataclass(frozen=True)
class IdentifierSection:
    basis: str = "spring_damper_cubic"
    k_f: float = 0.01
    l_f: float = 0.5
    gamma1: float = 10.0
    stack_size: int = 10
    snapshot_period: float = 0.5
    er_enabled: bool = True
    # rows follow the regressor layout, one row per basis function
    w1_init: tuple[tuple[float, ...], ...] = ()


@dataclass(frozen=True)
class CriticSection:
    gamma: float = 0.1
    T: float = 0.05
    alpha: float = 20.0
    k2: float = 1.0
    l: float = 0.5
    K1: tuple[float, ...] = ()
    K2: tuple[tuple[float, ...], ...] = ()
    Q: float = 1.0
    R: tuple[float, ...] = (1.0,)
    u_m: float = 2.0
    W_init: tuple[float, ...] = ()


@dataclass(frozen=True)
class ProbeSection:
    enabled: bool = False
    amplitude: float = 0.0
    frequencies: tuple[float, ...] = (1.1, 2.3, 3.7)
    random_phases: bool = False


@dataclass(frozen=True)
class SimSection:
    dt: float = 1e-3
    duration: float = 45.0
    seed: int = 0
    probe: ProbeSection = field(default_factory=ProbeSection)


@dataclass(frozen=True)
class OutputSection:
    dir: str = "out"
    csv: str = "run.csv"
    plots: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    plant: PlantSection
    reference: ReferenceSection = field(default_factory=ReferenceSection)
    identifier: IdentifierSection = field(default_factory=IdentifierSection)
    critic: CriticSection = field(default_factory=CriticSection)
    sim: SimSection = field(default_factory=SimSection)
    output: OutputSection = field(default_factory=OutputSection)
    schema_version: int = SCHEMA_VERSION


def _want(raw, path, kind):
    if kind is float:
        # bools are ints in Python; reject them for numeric fields
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {raw!r}")
        return float(raw)
    if kind is int:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"{path}: expected an integer, got {raw!r}")
        return raw
    if kind is bool:
        if not isinstance(raw, bool):
            raise ConfigError(f"{path}: expected a boolean, got {raw!r}")
        return raw
    if kind is str:
        if not isinstance(raw, str):
            raise ConfigError(f"{path}: expected a string, got {raw!r}")
        return raw
    raise AssertionError(kind)


def _float_tuple(raw, path):
    if not isinstance(raw, list):
        raise ConfigError(f"{path}: expected a list of numbers")
    return tuple(_want(v, f"{path}[{i}]", float) for i, v in enumerate(raw))


def _matrix(raw, path):
    if not isinstance(raw, list) or not all(isinstance(r, list) for r in raw):
        raise ConfigError(f"{path}: expected a list of rows")
    rows = tuple(_float_tuple(r, f"{path}[{i}]") for i, r in enumerate(raw))
    if rows and len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{path}: ragged rows")
    return rows


def _section(raw, path, fields):
    """Pull known keys out of a dict, rejecting everything else by path."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    extra = set(raw) - set(fields)
    if extra:
        raise ConfigError(f"{path}.{sorted(extra)[0]}: unknown key")
    return raw


def _parse_probe(raw, path):
    raw = _section(raw, path, ("enabled", "amplitude", "frequencies", "random_phases"))
    out = ProbeSection()
    kw = {}
    if "enabled" in raw:
        kw["enabled"] = _want(raw["enabled"], f"{path}.enabled", bool)
    if "amplitude" in raw:
        kw["amplitude"] = _want(raw["amplitude"], f"{path}.amplitude", float)
    if "frequencies" in raw:
        kw["frequencies"] = _float_tuple(raw["frequencies"], f"{path}.frequencies")
    if "random_phases" in raw:
        kw["random_phases"] = _want(raw["random_phases"], f"{path}.random_phases", bool)
    return ProbeSection(**{**asdict(out), **kw})


def _parse_schedule(raw, path):
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{path}: expected a non-empty list of segments")
    segs = []
    for i, row in enumerate(raw):
        row = _section(row, f"{path}[{i}]", ("t", "m", "k", "c"))
        for key in ("t", "m", "k", "c"):
            if key not in row:
                raise ConfigError(f"{path}[{i}].{key}: missing")
        segs.append(tuple(_want(row[key], f"{path}[{i}].{key}", float)
                          for key in ("t", "m", "k", "c")))
    return tuple(segs)


def config_from_dict(doc: dict) -> ExperimentConfig:
    """Validate a parsed JSON document into an ExperimentConfig."""
    doc = _section(doc, "config", (
        "schema_version", "plant", "reference", "identifier", "critic",
        "sim", "output",
    ))
    version = _want(doc.get("schema_version", SCHEMA_VERSION), "config.schema_version", int)
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"config.schema_version: expected {SCHEMA_VERSION}, got {version}"
        )
    if "plant" not in doc:
        raise ConfigError("config.plant: missing")

    praw = _section(doc["plant"], "plant", ("schedule", "x0"))
    if "schedule" not in praw:
        raise ConfigError("plant.schedule: missing")
    schedule = _parse_schedule(praw["schedule"], "plant.schedule")
    x0 = (0.0, 0.0)
    if "x0" in praw:
        x0 = _float_tuple(praw["x0"], "plant.x0")
        if len(x0) != 2:
            raise ConfigError("plant.x0: expected 2 entries")
    plant = PlantSection(schedule=schedule, x0=x0)

    reference = ReferenceSection()
    if "reference" in doc:
        rraw = _section(doc["reference"], "reference", ("x1d", "gain"))
        kw = {}
        if "x1d" in rraw:
            kw["x1d"] = _want(rraw["x1d"], "reference.x1d", float)
        if "gain" in rraw:
            kw["gain"] = _want(rraw["gain"], "reference.gain", float)
        reference = ReferenceSection(**kw)

    identifier = IdentifierSection()
    if "identifier" in doc:
        iraw = _section(doc["identifier"], "identifier", (
            "basis", "k_f", "l_f", "gamma1", "stack_size", "snapshot_period",
            "er_enabled", "w1_init",
        ))
        kw = {}
        for key, kind in (("basis", str), ("k_f", float), ("l_f", float),
                          ("gamma1", float), ("stack_size", int),
                          ("snapshot_period", float), ("er_enabled", bool)):
            if key in iraw:
                kw[key] = _want(iraw[key], f"identifier.{key}", kind)
        if "w1_init" in iraw:
            kw["w1_init"] = _matrix(iraw["w1_init"], "identifier.w1_init")
        identifier = IdentifierSection(**kw)

    critic = CriticSection()
    if "critic" in doc:
        craw = _section(doc["critic"], "critic", (
            "gamma", "T", "alpha", "k2", "l", "K1", "K2", "Q", "R", "u_m",
            "W_init",
        ))
        kw = {}
        for key in ("gamma", "T", "alpha", "k2", "l", "Q", "u_m"):
            if key in craw:
                kw[key] = _want(craw[key], f"critic.{key}", float)
        if "K1" in craw:
            kw["K1"] = _float_tuple(craw["K1"], "critic.K1")
        if "K2" in craw:
            kw["K2"] = _matrix(craw["K2"], "critic.K2")
        if "R" in craw:
            kw["R"] = _float_tuple(craw["R"], "critic.R")
        if "W_init" in craw:
            kw["W_init"] = _float_tuple(craw["W_init"], "critic.W_init")
        critic = CriticSection(**kw)

    sim = SimSection()
    if "sim" in doc:
        sraw = _section(doc["sim"], "sim", ("dt", "duration", "seed", "probe"))
        kw = {}
        for key, kind in (("dt", float), ("duration", float), ("seed", int)):
            if key in sraw:
                kw[key] = _want(sraw[key], f"sim.{key}", kind)
        if "probe" in sraw:
            kw["probe"] = _parse_probe(sraw["probe"], "sim.probe")
        sim = SimSection(**kw)

    output = OutputSection()
    if "output" in doc:
        oraw = _section(doc["output"], "output", ("dir", "csv", "plots"))
        kw = {}
        for key, kind in (("dir", str), ("csv", str), ("plots", bool)):
            if key in oraw:
                kw[key] = _want(oraw[key], f"output.{key}", kind)
        output = OutputSection(**kw)

    cfg = ExperimentConfig(
        plant=plant, reference=reference, identifier=identifier,
        critic=critic, sim=sim, output=output, schema_version=version,
    )
    _validate_semantics(cfg)
    return cfg


def _validate_semantics(cfg: ExperimentConfig) -> None:
    n1 = TRACKING_POLY7.n_features
    if cfg.identifier.basis not in BASES:
        raise ConfigError(
            f"identifier.basis: unknown basis {cfg.identifier.basis!r}; "
            f"available: {sorted(BASES)}"
        )
    basis = BASES[cfg.identifier.basis]
    kdim = basis.k_w1 + basis.k_w2

    times = [seg[0] for seg in cfg.plant.schedule]
    if times[0] != 0.0:
        raise ConfigError("plant.schedule[0].t: first segment must start at 0")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ConfigError("plant.schedule: segment times must strictly increase")
    for i, (_, m, k, c) in enumerate(cfg.plant.schedule):
        if m <= 0 or k <= 0 or c <= 0:
            raise ConfigError(f"plant.schedule[{i}]: m, k, c must be positive")

    sim = cfg.sim
    if sim.dt <= 0:
        raise ConfigError("sim.dt: must be positive")
    if sim.duration <= 0:
        raise ConfigError("sim.duration: must be positive")
    steps = sim.duration / sim.dt
    if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
        raise ConfigError("sim.duration: not a multiple of sim.dt")
    if times[-1] >= sim.duration:
        raise ConfigError("plant.schedule: last segment starts after the run ends")
    probe = sim.probe
    if probe.amplitude < 0:
        raise ConfigError("sim.probe.amplitude: must be nonnegative")
    if probe.enabled and probe.amplitude > 0 and not probe.frequencies:
        raise ConfigError("sim.probe.frequencies: empty with probe enabled")
    if any(f <= 0 for f in probe.frequencies):
        raise ConfigError("sim.probe.frequencies: must be positive")

    cr = cfg.critic
    for key in ("gamma", "T", "alpha", "l", "Q", "u_m"):
        if getattr(cr, key) <= 0:
            raise ConfigError(f"critic.{key}: must be positive")
    if cr.k2 < 0:
        raise ConfigError("critic.k2: must be nonnegative")
    ratio = cr.T / sim.dt
    if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
        raise ConfigError("critic.T: not a multiple of sim.dt")
    if cr.T >= sim.duration:
        raise ConfigError("critic.T: window longer than the run")
    if len(cr.R) != 1 or cr.R[0] <= 0:
        raise ConfigError("critic.R: expected one positive entry for the single input")
    k1 = cr.K1 if cr.K1 else tuple([0.15] * n1)
    if len(k1) != n1:
        raise ConfigError(f"critic.K1: expected {n1} entries, got {len(k1)}")
    k2 = cr.K2 if cr.K2 else tuple(
        tuple(0.06 if i == j else 0.0 for j in range(n1)) for i in range(n1)
    )
    if len(k2) != n1 or any(len(r) != n1 for r in k2):
        raise ConfigError(f"critic.K2: expected a {n1}x{n1} matrix")
    w0 = cr.W_init if cr.W_init else tuple([0.0] * n1)
    if len(w0) != n1:
        raise ConfigError(f"critic.W_init: expected {n1} entries, got {len(w0)}")
    # constructing GainConfig runs the positive-definiteness test on the
    # damping pair; its message already cites the offending eigenvalue
    GainConfig(
        alpha=cr.alpha, k2=cr.k2, l=cr.l, K1=np.array(k1),
        K2=np.array(k2), gamma=cr.gamma, T=cr.T,
    )

    ident = cfg.identifier
    for key in ("k_f", "l_f", "gamma1", "snapshot_period"):
        if getattr(ident, key) <= 0:
            raise ConfigError(f"identifier.{key}: must be positive")
    if ident.er_enabled and ident.stack_size < kdim:
        raise ConfigError(
            f"identifier.stack_size: need at least {kdim} snapshots "
            f"(combined regressor dimension) with replay enabled"
        )
    if ident.w1_init:
        rows = len(ident.w1_init)
        cols = len(ident.w1_init[0]) if rows else 0
        if rows != kdim or cols != basis.n_states:
            raise ConfigError(
                f"identifier.w1_init: expected {kdim}x{basis.n_states}, "
                f"got {rows}x{cols}"
            )

    if cfg.reference.gain <= 0:
        raise ConfigError("reference.gain: must be positive")
    if not cfg.output.csv:
        raise ConfigError("output.csv: empty filename")


def parse_config(path: str) -> ExperimentConfig:
    """Read and validate a config file; errors carry the field path."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return config_from_dict(doc)


def serialize_config(cfg: ExperimentConfig) -> dict:
    """Config back to the JSON document shape accepted by config_from_dict."""
    return {
        "schema_version": cfg.schema_version,
        "plant": {
            "schedule": [
                {"t": t, "m": m, "k": k, "c": c}
                for t, m, k, c in cfg.plant.schedule
            ],
            "x0": list(cfg.plant.x0),
        },
        "reference": {"x1d": cfg.reference.x1d, "gain": cfg.reference.gain},
        "identifier": {
            "basis": cfg.identifier.basis,
            "k_f": cfg.identifier.k_f,
            "l_f": cfg.identifier.l_f,
            "gamma1": cfg.identifier.gamma1,
            "stack_size": cfg.identifier.stack_size,
            "snapshot_period": cfg.identifier.snapshot_period,
            "er_enabled": cfg.identifier.er_enabled,
            "w1_init": [list(r) for r in cfg.identifier.w1_init],
        },
        "critic": {
            "gamma": cfg.critic.gamma,
            "T": cfg.critic.T,
            "alpha": cfg.critic.alpha,
            "k2": cfg.critic.k2,
            "l": cfg.critic.l,
            "K1": list(cfg.critic.K1),
            "K2": [list(r) for r in cfg.critic.K2],
            "Q": cfg.critic.Q,
            "R": list(cfg.critic.R),
            "u_m": cfg.critic.u_m,
            "W_init": list(cfg.critic.W_init),
        },
        "sim": {
            "dt": cfg.sim.dt,
            "duration": cfg.sim.duration,
            "seed": cfg.sim.seed,
            "probe": {
                "enabled": cfg.sim.probe.enabled,
                "amplitude": cfg.sim.probe.amplitude,
                "frequencies": list(cfg.sim.probe.frequencies),
                "random_phases": cfg.sim.probe.random_phases,
            },
        },
        "output": {
            "dir": cfg.output.dir,
            "csv": cfg.output.csv,
            "plots": cfg.output.plots,
        },
    }


def build_setup(cfg: ExperimentConfig) -> RunSetup:
    """Turn a validated config into the runtime RunSetup."""
    n1 = TRACKING_POLY7.n_features
    basis = BASES[cfg.identifier.basis]
    kdim = basis.k_w1 + basis.k_w2
    schedule = ParameterSchedule(segments=tuple(
        (t, PlantParams(m, k, c)) for t, m, k, c in cfg.plant.schedule
    ))
    cr = cfg.critic
    gains = GainConfig(
        alpha=cr.alpha, k2=cr.k2, l=cr.l,
        K1=np.array(cr.K1 if cr.K1 else [0.15] * n1, dtype=float),
        K2=np.array(cr.K2 if cr.K2 else np.eye(n1) * 0.06, dtype=float),
        gamma=cr.gamma, T=cr.T,
    )
    if cfg.identifier.w1_init:
        w1_init = np.array(cfg.identifier.w1_init, dtype=float)
    else:
        w1_init = np.zeros((kdim, basis.n_states))
    probe = ProbeSpec(
        enabled=cfg.sim.probe.enabled,
        amplitude=cfg.sim.probe.amplitude,
        frequencies=cfg.sim.probe.frequencies,
        random_phases=cfg.sim.probe.random_phases,
    )
    return RunSetup(
        schedule=schedule,
        x1d=cfg.reference.x1d,
        ref_gain=cfg.reference.gain,
        basis=basis,
        k_f=cfg.identifier.k_f,
        l_f=cfg.identifier.l_f,
        gamma1=cfg.identifier.gamma1,
        er_enabled=cfg.identifier.er_enabled,
        stack_size=cfg.identifier.stack_size,
        snapshot_period=cfg.identifier.snapshot_period,
        gains=gains,
        q_weight=cr.Q,
        sat=SaturationSpec(u_m=cr.u_m, r_diag=np.array(cr.R, dtype=float)),
        w_init=np.array(cr.W_init if cr.W_init else [0.0] * n1, dtype=float),
        w1_init=w1_init,
        sim=SimConfig(
            dt=cfg.sim.dt, duration=cfg.sim.duration, seed=cfg.sim.seed,
            probe=probe,
        ),
        x0=cfg.plant.x0,
    )
