"""
model.py
--------
Plant of a grid-connected VSI in the alpha-beta frame, written on the
instantaneous powers x = [P, Q] (W, var):

    dx/dt = A x + B u + E d

with the synthetic input u = [u_P, u_Q] (V^2) and the measured disturbance
d = V_G^2 (V^2). Also holds the transforms between u and the physical
alpha-beta voltages, the grid-voltage profiles and a fixed-step RK4 integrator.

Vectors are numpy arrays with a trailing axis of length 2; most functions
broadcast over leading axes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Protocol, Sequence

import numpy as np
import pandas as pd

from inverter_achievability.rng import Stream, substream

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ["t_s", "p_w", "q_var", "u_p", "u_q", "vg_v", "norm_u", "lb", "ub"]


@dataclass(frozen=True)
class PlantParams:
    """Physical and constraint constants. Defaults are the 110 V / 50 Hz test rig."""

    r_ohm: float = 0.12
    l_henry: float = 4e-3
    f_hz: float = 50.0
    vg_lo_v: float = 105.6
    vg_hi_v: float = 114.4
    u_lo_v: float = 104.5
    u_hi_v: float = 115.5

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise ValueError(f"{f.name} must be finite, got {value}")
            object.__setattr__(self, f.name, float(value))
        if self.r_ohm <= 0 or self.l_henry <= 0 or self.f_hz <= 0:
            raise ValueError("R, L and f must be positive")
        if not 0 < self.vg_lo_v <= self.vg_hi_v:
            raise ValueError(f"need 0 < vg_lo <= vg_hi, got {self.vg_lo_v}, {self.vg_hi_v}")
        if not 0 < self.u_lo_v <= self.u_hi_v:
            raise ValueError(f"need 0 < u_lo <= u_hi, got {self.u_lo_v}, {self.u_hi_v}")

    @property
    def omega(self) -> float:
        return 2.0 * math.pi * self.f_hz

    @property
    def d_lo(self) -> float:
        return self.vg_lo_v**2

    @property
    def d_hi(self) -> float:
        return self.vg_hi_v**2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PlantParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            # omega is derived from f_hz and never accepted as input
            raise ValueError(f"unknown plant keys: {sorted(unknown)}")
        return cls(**data)


def plant_matrices(params: PlantParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (A, B, E); E is returned as a length-2 vector since d is scalar."""
    decay = params.r_ohm / params.l_henry
    w = params.omega
    gain = 3.0 / (2.0 * params.l_henry)
    a = np.array([[-decay, -w], [w, -decay]])
    b = gain * np.eye(2)
    e = np.array([-gain, 0.0])
    return a, b, e


def input_matrices(params: PlantParams) -> tuple[np.ndarray, np.ndarray]:
    """B^-1 A and B^-1 E, the terms of the feedforward cancellation."""
    a, b, e = plant_matrices(params)
    return np.linalg.solve(b, a), np.linalg.solve(b, e)


def dynamics(x, u, d, params: PlantParams) -> np.ndarray:
    a, b, e = plant_matrices(params)
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    d = np.asarray(d, dtype=float)
    return x @ a.T + u @ b.T + d[..., None] * e


def feedforward(x_ref, d, params: PlantParams) -> np.ndarray:
    """Open-loop input that makes x_ref an equilibrium under disturbance d."""
    b_inv_a, b_inv_e = input_matrices(params)
    x_ref = np.asarray(x_ref, dtype=float)
    d = np.asarray(d, dtype=float)
    return -(x_ref @ b_inv_a.T + d[..., None] * b_inv_e)


# ---------------------------------------------------------------------------
# Grid-voltage profiles
# ---------------------------------------------------------------------------


class GridProfile(Protocol):
    kind: str

    def magnitude(self, t) -> np.ndarray: ...

    def to_dict(self) -> dict: ...


def profile_squared(profile: GridProfile, t) -> np.ndarray:
    """Disturbance d(t) = V_G(t)^2."""
    return np.square(profile.magnitude(t))


def grid_components(profile: GridProfile, t, params: PlantParams) -> tuple[np.ndarray, np.ndarray]:
    """(v_alpha, v_beta) = V_G(t) (cos wt, sin wt)."""
    t = np.asarray(t, dtype=float)
    v = profile.magnitude(t)
    phase = params.omega * t
    return v * np.cos(phase), v * np.sin(phase)


@dataclass(frozen=True)
class ConstantProfile:
    value: float
    kind: str = field(default="constant", init=False)

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise ValueError("constant profile value must be finite")
        object.__setattr__(self, "value", float(self.value))

    def magnitude(self, t) -> np.ndarray:
        return np.full(np.shape(t), self.value)

    def bounds(self) -> tuple[float, float]:
        return self.value, self.value

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value}


@dataclass(frozen=True)
class SinusoidProfile:
    mean: float
    amplitude: float
    period: float
    kind: str = field(default="sinusoid", init=False)

    def __post_init__(self) -> None:
        if self.period <= 0:
            raise ValueError("sinusoid period must be positive")
        if self.amplitude < 0:
            raise ValueError("sinusoid amplitude must be non-negative")

    def magnitude(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return self.mean + self.amplitude * np.sin(2.0 * np.pi * t / self.period)

    def bounds(self) -> tuple[float, float]:
        return self.mean - self.amplitude, self.mean + self.amplitude

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "mean": self.mean,
            "amplitude": self.amplitude,
            "period": self.period,
        }


@dataclass(frozen=True)
class RandomWalkProfile:
    """
    Clamped random walk: from `start`, each knot moves by +/- `step` volts and
    is clamped to [lo, hi]. Knots are `interval` seconds apart and cover
    [0, span]; V_G is linearly interpolated between knots and held after span.
    """

    start: float
    step: float
    seed: int
    lo: float
    hi: float
    interval: float = 1e-4
    span: float = 2.0
    kind: str = field(default="random-walk", init=False)
    _knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.lo <= self.start <= self.hi:
            raise ValueError("random walk must start inside [lo, hi]")
        if self.step < 0 or self.interval <= 0 or self.span <= 0:
            raise ValueError("random walk needs step >= 0, interval > 0 and span > 0")
        n = int(math.ceil(self.span / self.interval))
        signs = substream(self.seed, Stream.PROFILES).choice([-1.0, 1.0], size=n)
        knots = np.empty(n + 1)
        value = float(self.start)
        knots[0] = value
        for i, sign in enumerate(signs, start=1):
            value = min(self.hi, max(self.lo, value + sign * self.step))
            knots[i] = value
        knots.setflags(write=False)
        object.__setattr__(self, "_knots", knots)

    def magnitude(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        grid = np.arange(self._knots.size) * self.interval
        return np.interp(t, grid, self._knots)

    def bounds(self) -> tuple[float, float]:
        return float(self._knots.min()), float(self._knots.max())

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "start": self.start,
            "step": self.step,
            "seed": self.seed,
            "lo": self.lo,
            "hi": self.hi,
            "interval": self.interval,
            "span": self.span,
        }


PROFILE_KINDS = {
    "constant": ConstantProfile,
    "sinusoid": SinusoidProfile,
    "random-walk": RandomWalkProfile,
}


def profile_from_dict(data: dict) -> GridProfile:
    data = dict(data)
    kind = data.pop("kind", None)
    if kind not in PROFILE_KINDS:
        raise ValueError(f"unknown profile kind: {kind!r}")
    try:
        return PROFILE_KINDS[kind](**data)
    except TypeError as exc:
        raise ValueError(f"bad {kind} profile: {exc}") from exc


def check_profile(profile: GridProfile, params: PlantParams) -> None:
    """Raise ValueError unless the profile stays inside [vg_lo, vg_hi] for all t."""
    lo, hi = profile.bounds()
    if lo < params.vg_lo_v or hi > params.vg_hi_v:
        raise ValueError(
            f"{profile.kind} profile spans [{lo:.4f}, {hi:.4f}] V, "
            f"outside [{params.vg_lo_v}, {params.vg_hi_v}] V"
        )


def default_ensemble(params: PlantParams, dt: float = 1e-4, span: float = 2.0, seed: int = 0) -> tuple:
    """Audit set: both extremes, the mid-band constant, a 0.5 Hz sinusoid, a random walk."""
    mid = 0.5 * (params.vg_lo_v + params.vg_hi_v)
    band = params.vg_hi_v - params.vg_lo_v
    return (
        ConstantProfile(params.vg_lo_v),
        ConstantProfile(params.vg_hi_v),
        ConstantProfile(mid),
        SinusoidProfile(mean=mid, amplitude=0.45 * band, period=2.0),
        RandomWalkProfile(
            start=mid,
            step=0.1,
            seed=seed,
            lo=params.vg_lo_v,
            hi=params.vg_hi_v,
            interval=dt,
            span=span,
        ),
    )


def profile_label(index: int, profile: GridProfile) -> str:
    return f"{index:02d}_{profile.kind}"


# ---------------------------------------------------------------------------
# alpha-beta transforms
# ---------------------------------------------------------------------------


def to_alpha_beta(u, profile: GridProfile, t, params: PlantParams) -> np.ndarray:
    """Physical (u_alpha, u_beta) in V from the synthetic input u in V^2."""
    u = np.asarray(u, dtype=float)
    v_sq = profile_squared(profile, t)
    if np.any(profile.magnitude(t) <= 0):
        raise ValueError("grid voltage magnitude must be positive to invert the transform")
    v_alpha, v_beta = grid_components(profile, t, params)
    u_p, u_q = u[..., 0], u[..., 1]
    return np.stack(
        [(v_alpha * u_p + v_beta * u_q) / v_sq, (v_beta * u_p - v_alpha * u_q) / v_sq],
        axis=-1,
    )


def from_alpha_beta(uab, profile: GridProfile, t, params: PlantParams) -> np.ndarray:
    uab = np.asarray(uab, dtype=float)
    v_alpha, v_beta = grid_components(profile, t, params)
    u_a, u_b = uab[..., 0], uab[..., 1]
    return np.stack([v_alpha * u_a + v_beta * u_b, v_beta * u_a - v_alpha * u_b], axis=-1)


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------

ControlLaw = Callable[[np.ndarray, float], np.ndarray]


def step_count(horizon: float, dt: float) -> int:
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return max(1, int(round(horizon / dt)))


def step_rk4(x, law: ControlLaw, profile: GridProfile, t: float, dt: float, params: PlantParams) -> np.ndarray:
    """One classical RK4 step; the law sees the disturbance at each stage time."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    x = np.asarray(x, dtype=float)

    def rhs(state: np.ndarray, time: float) -> np.ndarray:
        d = float(profile_squared(profile, time))
        return dynamics(state, law(state, d), d, params)

    k1 = rhs(x, t)
    k2 = rhs(x + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = rhs(x + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = rhs(x + dt * k3, t + dt)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    vg: np.ndarray
    params: PlantParams

    @property
    def norm_u(self) -> np.ndarray:
        return np.hypot(self.controls[:, 0], self.controls[:, 1])

    @property
    def lower(self) -> np.ndarray:
        return self.params.u_lo_v * self.vg

    @property
    def upper(self) -> np.ndarray:
        return self.params.u_hi_v * self.vg

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "t_s": self.times,
                "p_w": self.states[:, 0],
                "q_var": self.states[:, 1],
                "u_p": self.controls[:, 0],
                "u_q": self.controls[:, 1],
                "vg_v": self.vg,
                "norm_u": self.norm_u,
                "lb": self.lower,
                "ub": self.upper,
            },
            columns=TRAJECTORY_COLUMNS,
        )


def simulate(
    x0,
    law: ControlLaw,
    profile: GridProfile,
    params: PlantParams,
    dt: float = 1e-4,
    horizon: float = 0.5,
) -> Trajectory:
    n = step_count(horizon, dt)
    times = np.arange(n + 1) * dt
    vg = profile.magnitude(times)
    states = np.empty((n + 1, 2))
    controls = np.empty((n + 1, 2))
    x = np.asarray(x0, dtype=float)
    for i, t in enumerate(times):
        states[i] = x
        controls[i] = law(x, float(vg[i]) ** 2)
        if i < n:
            x = step_rk4(x, law, profile, float(t), dt, params)
    logger.debug("simulated %d steps of %s profile", n, profile.kind)
    return Trajectory(times=times, states=states, controls=controls, vg=vg, params=params)


def sample_times(profiles: Sequence[GridProfile], horizon: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Sample times and a (n_profiles, n_times) array of V_G values."""
    times = np.arange(step_count(horizon, dt) + 1) * dt
    return times, np.stack([p.magnitude(times) for p in profiles])
