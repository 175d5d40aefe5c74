"""Lumped-parameter loss-of-flow plant.

A deliberately small sodium-cooled core model used to synthesize transients
for the digital twins:

    Q(t)        = Q_rated * (w1(t) + w2(t)) / 2
    T_out(t)    = T_in + P / (cp * Q(t))
    dT_plen/dt  = (T_out - T_plen) / tau_plenum
    dT_fcl/dt   = (T_plen + P * R_fuel * (Q_rated / Q)^0.8 - T_fcl) / tau_fuel

Pump 1 follows a linear ramp-down; pump 2 may be ramped (up or down) by
control actions.  The state is advanced with explicit Euler at ``dt``.
Fifteen sensor channels are affine maps of ``(w1, w2, Q, T_out, T_plen)``
and of the instantaneous fuel-to-coolant rise;
the fuel centerline temperature is kept as the hidden target.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

PUMP1 = "pump1_speed"
PUMP2 = "pump2_speed"
CORE_FLOW = "core_flow"
CORE_INLET = "core_inlet_temp"
CORE_OUTLET = "core_outlet_temp"
UPPER_PLENUM = "upper_plenum_temp"
LOWER_PLENUM = "lower_plenum_temp"
IHX_INLET = "ihx_inlet_temp"
IHX_OUTLET = "ihx_outlet_temp"
CLADDING = "cladding_temp"
POWER = "reactor_power"
TANK_LEVEL = "primary_tank_level"
PUMP1_PRESSURE = "pump1_discharge_pressure"
PUMP2_PRESSURE = "pump2_discharge_pressure"
SECONDARY_FLOW = "secondary_flow"

CHANNELS: tuple[str, ...] = (
    PUMP1,
    PUMP2,
    CORE_FLOW,
    CORE_INLET,
    CORE_OUTLET,
    UPPER_PLENUM,
    LOWER_PLENUM,
    IHX_INLET,
    IHX_OUTLET,
    CLADDING,
    POWER,
    TANK_LEVEL,
    PUMP1_PRESSURE,
    PUMP2_PRESSURE,
    SECONDARY_FLOW,
)
SSF = "ssf"

# share of the fuel-to-coolant temperature rise seen by the cladding sensor
CLAD_FRACTION = 0.4


class InvalidScenarioError(ValueError):
    """Raised when a scenario cannot be simulated (e.g. zero core flow)."""


@dataclass(frozen=True)
class PumpProfile:
    """Linear pump coast-down: ``w0`` until ``t_acc``, then a ramp of length
    ``T_ramp`` to ``w0 * w_end``, constant afterwards."""

    w0: float = 1.0
    w_end: float = 1.0
    T_ramp: float = 467.81
    t_acc: float = 50.0

    def __post_init__(self):
        if not 0.0 <= self.w_end <= 1.0:
            raise ValueError(f"w_end must lie in [0, 1], got {self.w_end}")
        if self.T_ramp <= 0:
            raise ValueError("T_ramp must be positive")
        if self.t_acc < 0:
            raise ValueError("t_acc must be non-negative")


@dataclass(frozen=True)
class ControlAction:
    """A pump-2 speed ramp starting at ``t_start`` from whatever speed pump 2
    has at that moment to ``pump2_target`` over ``ramp_duration`` seconds."""

    kind: str = "pump2_compensation"
    t_start: float = 0.0
    pump2_target: float = 1.0
    ramp_duration: float = 60.0

    def __post_init__(self):
        if self.kind not in ("pump2_compensation", "context_switch"):
            raise ValueError(f"unknown action kind {self.kind!r}")
        if self.t_start < 0:
            raise ValueError("t_start must be non-negative")
        if not 0.0 <= self.pump2_target <= 1.5:
            raise ValueError("pump2_target must lie in [0, 1.5]")
        if self.ramp_duration < 0:
            raise ValueError("ramp_duration must be non-negative")


@dataclass(frozen=True)
class PlantConfig:
    """Plant and sampling parameters.

    ``noise_sigma`` is relative: each channel gets Gaussian noise with
    standard deviation ``noise_sigma * |nominal steady value|``.
    """

    dt: float = 0.5
    n_steps: int = 2000
    power: float = 62.5e6  # W
    cp: float = 1270.0  # J/(kg K), coolant heat-capacity coefficient
    flow_rated: float = 485.0  # kg/s
    t_inlet: float = 371.0  # degC
    r_fuel: float = 2.4e-6  # K/W, fuel centerline-to-coolant resistance
    tau_plenum: float = 20.0  # s
    tau_fuel: float = 5.0  # s
    noise_sigma: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 2:
            raise ValueError("n_steps must be at least 2")
        if self.tau_plenum <= 0 or self.tau_fuel <= 0:
            raise ValueError("time constants must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if self.power <= 0 or self.cp <= 0 or self.flow_rated <= 0 or self.r_fuel < 0:
            raise ValueError("thermal parameters must be positive")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.dt


@dataclass(frozen=True, eq=False)
class Episode:
    dt: float
    channels: dict[str, np.ndarray]
    ssf: np.ndarray
    profile: PumpProfile
    actions: tuple[ControlAction, ...] = ()
    seed: int = 0
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.channels) != len(CHANNELS):
            raise ValueError(f"expected {len(CHANNELS)} channels, got {len(self.channels)}")
        if SSF in self.channels:
            raise ValueError("the hidden SSF must not appear among the sensor channels")
        n = len(self.ssf)
        for name, series in self.channels.items():
            if len(series) != n:
                raise ValueError(f"channel {name!r} has length {len(series)}, expected {n}")
            series.setflags(write=False)
        self.ssf.setflags(write=False)

    @property
    def n_steps(self) -> int:
        return len(self.ssf)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps) * self.dt

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """Stack the named series (``"ssf"`` allowed) as columns."""
        cols = []
        for name in names:
            if name == SSF:
                cols.append(self.ssf)
            elif name in self.channels:
                cols.append(self.channels[name])
            else:
                raise KeyError(f"episode has no channel {name!r}")
        return np.column_stack(cols)

    def __eq__(self, other):
        if not isinstance(other, Episode):
            return NotImplemented
        return (
            self.dt == other.dt
            and self.profile == other.profile
            and self.actions == other.actions
            and self.seed == other.seed
            and self.tags == other.tags
            and list(self.channels) == list(other.channels)
            and all(np.array_equal(self.channels[k], other.channels[k]) for k in self.channels)
            and np.array_equal(self.ssf, other.ssf)
        )

    __hash__ = None


def pump_speed(profile: PumpProfile, t):
    """Pump-1 speed at time ``t`` (scalar or array)."""
    t = np.asarray(t, dtype=float)
    frac = np.clip((t - profile.t_acc) / profile.T_ramp, 0.0, 1.0)
    # blend form so the ramp ends exactly on w0 * w_end
    speed = profile.w0 * ((1.0 - frac) + profile.w_end * frac)
    return float(speed) if speed.ndim == 0 else speed


def pump2_speed(actions: Sequence[ControlAction], t, initial: float = 1.0):
    """Pump-2 speed at time ``t`` (scalar or array).

    Each action ramps linearly from the speed pump 2 has at ``act.t_start``
    and supersedes any earlier ramp still in progress.
    """
    t = np.asarray(t, dtype=float)
    speed = np.full(t.shape, float(initial))
    for act, start in zip(actions, _action_start_speeds(actions, initial)):
        if act.ramp_duration == 0:
            ramp = np.full(t.shape, act.pump2_target)
        else:
            frac = np.clip((t - act.t_start) / act.ramp_duration, 0.0, 1.0)
            ramp = start * (1.0 - frac) + act.pump2_target * frac
        speed = np.where(t >= act.t_start, ramp, speed)
    return float(speed) if speed.ndim == 0 else speed


def _action_start_speeds(actions: Sequence[ControlAction], initial: float) -> list[float]:
    starts: list[float] = []
    prev, prev_start = None, float(initial)
    for act in actions:
        s = prev_start if prev is None else _ramp_at(prev, prev_start, act.t_start)
        starts.append(s)
        prev, prev_start = act, s
    return starts


def _ramp_at(act: ControlAction, start: float, t: float) -> float:
    if t <= act.t_start:
        return start
    if act.ramp_duration == 0 or t >= act.t_start + act.ramp_duration:
        return act.pump2_target
    frac = (t - act.t_start) / act.ramp_duration
    return start * (1.0 - frac) + act.pump2_target * frac


def _nominal_values(cfg: PlantConfig) -> np.ndarray:
    """Steady channel values at rated pump speeds (used for noise scaling)."""
    one = np.ones(1)
    q = np.full(1, cfg.flow_rated)
    t_out = cfg.t_inlet + cfg.power / (cfg.cp * q)
    rise = np.full(1, cfg.power * cfg.r_fuel)
    return _sensor_matrix(cfg, one, one, q, t_out, t_out, rise)[0]


def _sensor_matrix(cfg, w1, w2, q, t_out, t_plen, fuel_rise) -> np.ndarray:
    mean_coolant = 0.5 * (cfg.t_inlet + t_plen)
    cols = {
        PUMP1: w1,
        PUMP2: w2,
        CORE_FLOW: q,
        CORE_INLET: np.full_like(q, cfg.t_inlet),
        CORE_OUTLET: t_out,
        UPPER_PLENUM: t_plen,
        LOWER_PLENUM: cfg.t_inlet + 0.05 * (t_plen - cfg.t_inlet),
        IHX_INLET: 315.0 + 0.15 * (t_plen - cfg.t_inlet),
        IHX_OUTLET: 0.9 * t_plen + 10.0,
        CLADDING: t_plen + CLAD_FRACTION * fuel_rise,
        POWER: np.full_like(q, cfg.power / 1e6),
        TANK_LEVEL: 7.6 + 0.002 * (mean_coolant - 400.0),
        PUMP1_PRESSURE: 0.1 + 0.45 * w1,
        PUMP2_PRESSURE: 0.1 + 0.45 * w2,
        SECONDARY_FLOW: np.full_like(q, 315.0),
    }
    return np.column_stack([cols[name] for name in CHANNELS])


def simulate_episode(
    profile: PumpProfile,
    actions: Sequence[ControlAction] = (),
    cfg: PlantConfig = PlantConfig(),
    seed: int | None = None,
    tags: dict | None = None,
) -> Episode:
    """Integrate the plant over ``cfg.n_steps`` steps and sample all sensors.

    Sensor noise is drawn from ``seed`` (default ``cfg.seed``) for the whole
    episode up front, so it does not depend on the actions.
    """
    actions = tuple(actions)
    if any(b.t_start < a.t_start for a, b in zip(actions, actions[1:])):
        raise ValueError("actions must be sorted by t_start")
    if cfg.dt > min(cfg.tau_plenum, cfg.tau_fuel):
        raise ValueError("dt exceeds the smallest thermal time constant; explicit Euler would ring")
    seed = cfg.seed if seed is None else int(seed)

    t = cfg.times
    w1 = pump_speed(profile, t)
    w2 = pump2_speed(actions, t)
    q = cfg.flow_rated * (w1 + w2) / 2.0
    if np.any(q <= 0):
        first = int(np.argmax(q <= 0))
        raise InvalidScenarioError(f"core flow reaches zero at t={t[first]:g} s")

    t_out = cfg.t_inlet + cfg.power / (cfg.cp * q)
    fuel_rise = cfg.power * cfg.r_fuel * (cfg.flow_rated / q) ** 0.8

    n = cfg.n_steps
    t_plen = np.empty(n)
    t_fcl = np.empty(n)
    t_plen[0] = t_out[0]
    t_fcl[0] = t_out[0] + fuel_rise[0]
    kp = cfg.dt / cfg.tau_plenum
    kf = cfg.dt / cfg.tau_fuel
    for i in range(n - 1):
        t_plen[i + 1] = t_plen[i] + kp * (t_out[i] - t_plen[i])
        t_fcl[i + 1] = t_fcl[i] + kf * (t_plen[i] + fuel_rise[i] - t_fcl[i])

    sensors = _sensor_matrix(cfg, w1, w2, q, t_out, t_plen, fuel_rise)
    if cfg.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        scale = cfg.noise_sigma * np.abs(_nominal_values(cfg))
        sensors = sensors + rng.standard_normal(sensors.shape) * scale

    channels = {name: np.ascontiguousarray(sensors[:, j]) for j, name in enumerate(CHANNELS)}
    return Episode(
        dt=cfg.dt,
        channels=channels,
        ssf=t_fcl,
        profile=profile,
        actions=actions,
        seed=seed,
        tags=dict(tags or {}),
    )


def inject_context_switch(
    profile: PumpProfile,
    actions: Sequence[ControlAction],
    cfg: PlantConfig,
    switch: ControlAction,
    seed: int | None = None,
    tags: dict | None = None,
) -> Episode:
    """Re-run an episode with one extra pump-2 action injected mid-transient.

    Noise is drawn from the same seed, so the result matches the unswitched
    episode exactly on every sample before ``switch.t_start``.
    """
    duration = (cfg.n_steps - 1) * cfg.dt
    if not 0.0 <= switch.t_start <= duration:
        raise ValueError(f"switch at t={switch.t_start} outside episode [0, {duration}]")
    merged = sorted([*actions, switch], key=lambda a: a.t_start)
    tags = dict(tags or {})
    tags["context_switch"] = asdict(switch)
    return simulate_episode(profile, merged, cfg, seed=seed, tags=tags)


def steady_state_rise(cfg: PlantConfig, flow: float) -> float:
    """Coolant temperature rise across the core at constant ``flow``."""
    return cfg.power / (cfg.cp * flow)


# -- serialization -----------------------------------------------------------


def save_episode(episode: Episode, path) -> Path:
    """Write ``<path>.csv`` plus a ``<path>.json`` sidecar; return the CSV path."""
    path = Path(path).with_suffix("")
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(episode.channels)
    data = np.column_stack([episode.times, episode.matrix(names), episode.ssf])
    csv_path = path.with_suffix(".csv")
    np.savetxt(csv_path, data, fmt="%.17g", delimiter=",", header=",".join(["t", *names, SSF]), comments="")
    meta = {
        "dt": episode.dt,
        "seed": episode.seed,
        "profile": asdict(episode.profile),
        "actions": [asdict(a) for a in episode.actions],
        "tags": episode.tags,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2))
    return csv_path


def load_episode(path) -> Episode:
    path = Path(path).with_suffix("")
    csv_path = path.with_suffix(".csv")
    with open(csv_path) as fh:
        header = fh.readline().strip().split(",")
    if header[0] != "t" or header[-1] != SSF:
        raise ValueError(f"{csv_path}: unexpected header")
    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    meta = json.loads(path.with_suffix(".json").read_text())
    channels = {name: np.ascontiguousarray(data[:, j + 1]) for j, name in enumerate(header[1:-1])}
    return Episode(
        dt=meta["dt"],
        channels=channels,
        ssf=np.ascontiguousarray(data[:, -1]),
        profile=PumpProfile(**meta["profile"]),
        actions=tuple(ControlAction(**a) for a in meta["actions"]),
        seed=meta["seed"],
        tags=meta["tags"],
    )


def with_noise_off(cfg: PlantConfig) -> PlantConfig:
    return replace(cfg, noise_sigma=0.0)
