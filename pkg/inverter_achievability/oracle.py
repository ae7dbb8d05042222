"""
oracle.py
---------
Brute-force achievability checkers that do not rely on the S-lemma:

* steady_state_achievable: sweeps d over [vg_lo^2, vg_hi^2] at e = 0, where the
  input no longer depends on K.
* trajectory_achievable: simulates the closed loop against an ensemble of
  grid-voltage profiles and monitors U_lo V_G <= ||u|| <= U_hi V_G.
* trajectory_margins: the same check for many setpoints at once. The
  disturbance cancels exactly at every RK4 stage, so the error follows
  e_n = Phi^n e_0 with Phi the RK4 one-step matrix of A - BK.
* implication_counterexample: sampling falsifier for q_a >= 0 => q_b >= 0.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np
import pandas as pd

from inverter_achievability.certificate import QuadraticForm
from inverter_achievability.controller import (
    FeedbackLaw,
    Gain,
    Setpoint,
    require_stabilizing,
    rk4_transition,
    time_constant,
)
from inverter_achievability.model import (
    GridProfile,
    PlantParams,
    Trajectory,
    input_matrices,
    profile_label,
    sample_times,
    simulate,
    step_count,
)
from inverter_achievability.rng import Stream, substream

logger = logging.getLogger(__name__)

DEFAULT_GRID = 1001
FALSIFIER_TOL = 1e-6
# setpoints per block in the batched checker; bounds memory at ~n_steps * 256 * 2 floats
CHUNK = 256


class SlowGainError(ValueError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-4
    horizon: float = 0.5
    max_horizon: float = 2.0

    def __post_init__(self) -> None:
        if self.dt <= 0 or self.horizon <= 0:
            raise ValueError("dt and horizon must be positive")
        if self.max_horizon < self.horizon:
            raise ValueError("max_horizon must be at least horizon")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "IntegratorConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown integrator keys: {sorted(unknown)}")
        return cls(**data)


def violation_tolerance(params: PlantParams) -> float:
    return 1e-9 * params.u_hi_v * params.vg_hi_v


# ---------------------------------------------------------------------------
# Steady state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SteadyStateVerdict:
    achievable: bool
    margin: float
    worst_d: float


def steady_state_offset(x_ref, params: PlantParams) -> np.ndarray:
    """w = -B^-1 A x_ref, so u_ss(d) = w + [d, 0]."""
    b_inv_a, _ = input_matrices(params)
    return -(np.asarray(x_ref, dtype=float) @ b_inv_a.T)


def steady_state_achievable(x_ref: Setpoint, params: PlantParams, n_grid: int = DEFAULT_GRID) -> SteadyStateVerdict:
    """
    Exact steady-state check. Both squared margins ||u||^2 - U_lo^2 d and
    U_hi^2 d - ||u||^2 are quadratics in d, so the grid, both endpoints and
    their stationary points decide the sign; the reported margin is
    min(||u|| - U_lo sqrt(d), U_hi sqrt(d) - ||u||) in V^2.
    """
    if n_grid < 2:
        raise ValueError("n_grid must be at least 2")
    w = steady_state_offset(x_ref.vector, params)
    d_lo, d_hi = params.d_lo, params.d_hi
    stationary = np.array([params.u_lo_v**2 / 2.0 - w[0], params.u_hi_v**2 / 2.0 - w[0]])
    d = np.concatenate(
        [np.linspace(d_lo, d_hi, n_grid), [d_lo, d_hi], stationary[(stationary > d_lo) & (stationary < d_hi)]]
    )
    norm_sq = (w[0] + d) ** 2 + w[1] ** 2
    lower_sq = norm_sq - params.u_lo_v**2 * d
    upper_sq = params.u_hi_v**2 * d - norm_sq
    achievable = bool(np.all(lower_sq >= 0.0) and np.all(upper_sq >= 0.0))

    norm = np.sqrt(norm_sq)
    root = np.sqrt(d)
    margins = np.minimum(norm - params.u_lo_v * root, params.u_hi_v * root - norm)
    worst = int(np.argmin(margins))
    return SteadyStateVerdict(achievable, float(margins[worst]), float(d[worst]))


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstraintTrace:
    label: str
    trajectory: Trajectory
    lower: np.ndarray
    upper: np.ndarray
    violation: np.ndarray
    worst_margin: float

    @property
    def times(self) -> np.ndarray:
        return self.trajectory.times

    @property
    def norm_u(self) -> np.ndarray:
        return self.trajectory.norm_u

    @property
    def n_violations(self) -> int:
        return int(self.violation.sum())

    def to_frame(self) -> pd.DataFrame:
        frame = self.trajectory.to_frame()
        frame["lb_v2"] = self.lower
        frame["ub_v2"] = self.upper
        frame["violation"] = self.violation
        return frame


def constraint_trace(label: str, trajectory: Trajectory, params: PlantParams) -> ConstraintTrace:
    norm = trajectory.norm_u
    lower = params.u_lo_v * trajectory.vg
    upper = params.u_hi_v * trajectory.vg
    tol = violation_tolerance(params)
    violation = (norm < lower - tol) | (norm > upper + tol)
    worst = float(np.min(np.minimum(norm - lower, upper - norm)))
    return ConstraintTrace(label, trajectory, lower, upper, violation, worst)


def effective_horizon(k: Gain, params: PlantParams, integrator: IntegratorConfig) -> float:
    """max(horizon, 5 time constants); SlowGainError past max_horizon."""
    settle = 5.0 * time_constant(k, params)
    if settle > integrator.max_horizon:
        raise SlowGainError(
            f"gain {k.to_json()} needs {settle:.3f} s to settle, above max_horizon {integrator.max_horizon} s"
        )
    return max(integrator.horizon, settle)


@dataclass(frozen=True)
class TrajectoryVerdict:
    achievable: bool
    horizon: float
    traces: tuple[ConstraintTrace, ...]

    @property
    def worst_margin(self) -> float:
        return min(trace.worst_margin for trace in self.traces)


def trajectory_achievable(
    x0,
    x_ref: Setpoint,
    k: Gain,
    params: PlantParams,
    ensemble: Sequence[GridProfile],
    integrator: IntegratorConfig = IntegratorConfig(),
) -> TrajectoryVerdict:
    require_stabilizing(k, params)
    if not ensemble:
        raise ValueError("profile ensemble is empty")
    horizon = effective_horizon(k, params, integrator)
    law = FeedbackLaw(x_ref, k, params)
    traces = []
    for i, profile in enumerate(ensemble):
        traj = simulate(x0, law, profile, params, dt=integrator.dt, horizon=horizon)
        trace = constraint_trace(profile_label(i, profile), traj, params)
        logger.debug("%s: worst margin %.3f V^2, %d violations", trace.label, trace.worst_margin, trace.n_violations)
        traces.append(trace)
    achievable = not any(trace.n_violations for trace in traces)
    return TrajectoryVerdict(achievable, horizon, tuple(traces))


def transition_powers(k: Gain, params: PlantParams, dt: float, n_steps: int) -> np.ndarray:
    """Phi^j for j = 0..n_steps, shape (n_steps + 1, 2, 2)."""
    phi = rk4_transition(k, params, dt)
    powers = np.empty((n_steps + 1, 2, 2))
    powers[0] = np.eye(2)
    for j in range(1, n_steps + 1):
        powers[j] = phi @ powers[j - 1]
    return powers


def trajectory_margins(
    x0,
    x_refs,
    k: Gain,
    params: PlantParams,
    ensemble: Sequence[GridProfile],
    integrator: IntegratorConfig = IntegratorConfig(),
) -> np.ndarray:
    """Worst constraint margin (V^2) over time and profiles for each row of x_refs."""
    require_stabilizing(k, params)
    if not ensemble:
        raise ValueError("profile ensemble is empty")
    horizon = effective_horizon(k, params, integrator)
    x_refs = np.asarray(x_refs, dtype=float).reshape(-1, 2)
    n_steps = step_count(horizon, integrator.dt)
    _, vg = sample_times(ensemble, horizon, integrator.dt)
    d = vg**2
    lower = params.u_lo_v * vg
    upper = params.u_hi_v * vg

    powers = transition_powers(k, params, integrator.dt, n_steps)
    k_powers = k.matrix @ powers
    offsets = steady_state_offset(x_refs, params)
    errors0 = np.asarray(x0, dtype=float) - x_refs

    margins = np.empty(len(x_refs))
    for start in range(0, len(x_refs), CHUNK):
        stop = start + CHUNK
        # u_n = w + [d_n, 0] - K Phi^n e_0
        ke = np.einsum("jab,nb->jna", k_powers, errors0[start:stop])
        u_p = offsets[None, start:stop, 0] - ke[..., 0]
        u_q = offsets[None, start:stop, 1] - ke[..., 1]
        worst = np.full(u_p.shape[1], np.inf)
        for prof in range(d.shape[0]):
            norm = np.hypot(u_p + d[prof, :, None], u_q)
            low, high = lower[prof, :, None], upper[prof, :, None]
            worst = np.minimum(worst, np.min(np.minimum(norm - low, high - norm), axis=0))
        margins[start:stop] = worst
    return margins


def trajectory_verdicts(margins: np.ndarray, params: PlantParams) -> np.ndarray:
    return margins >= -violation_tolerance(params)


# ---------------------------------------------------------------------------
# Implication falsifier
# ---------------------------------------------------------------------------


def implication_counterexample(
    qa: QuadraticForm,
    qb: QuadraticForm,
    box: Sequence[tuple[float, float]],
    n_samples: int,
    seed: int,
    batch: int = 8192,
) -> np.ndarray | None:
    """First sampled z in the box with q_a(z) >= 0 and q_b(z) < -1e-6, or None."""
    bounds = np.asarray(box, dtype=float)
    if bounds.shape != (3, 2) or not np.all(np.isfinite(bounds)):
        raise ValueError("box must be three finite (low, high) pairs")
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = substream(seed, Stream.FALSIFIER)
    drawn = 0
    while drawn < n_samples:
        size = min(batch, n_samples - drawn)
        z = bounds[:, 0] + rng.random((size, 3)) * (bounds[:, 1] - bounds[:, 0])
        hits = np.flatnonzero((qa.evaluate(z) >= 0.0) & (qb.evaluate(z) < -FALSIFIER_TOL))
        if hits.size:
            return z[hits[0]]
        drawn += size
    return None


def falsifier_box(params: PlantParams, half_width: float = 1e5) -> list[tuple[float, float]]:
    return [(params.d_lo, params.d_hi), (-half_width, half_width), (-half_width, half_width)]


def settle_check(trace: ConstraintTrace, x_ref: Setpoint, rel_tol: float = 1e-3) -> bool:
    """Final state within rel_tol * ||x_ref|| of the setpoint."""
    error = np.linalg.norm(trace.trajectory.states[-1] - x_ref.vector)
    return bool(error <= rel_tol * max(math.hypot(x_ref.p_ref, x_ref.q_ref), 1e-12))
