"""
montecarlo.py
-------------
Achievability rate S(K) = (# achievable setpoints) / (# sampled setpoints),
Monte Carlo gain search over a box around K = 0, and region maps.

All gains of one search are scored on the same setpoint sample, and every
random draw is keyed by (seed, stream, index) so results do not depend on the
number of worker threads.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from enum import Enum
from fractions import Fraction
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.stats import binomtest

from inverter_achievability.certificate import SearchConfig, check_setpoint
from inverter_achievability.controller import Gain, Setpoint, is_stabilizing, setpoint_array
from inverter_achievability.model import GridProfile, PlantParams
from inverter_achievability.oracle import (
    DEFAULT_GRID,
    IntegratorConfig,
    SlowGainError,
    steady_state_achievable,
    trajectory_margins,
    trajectory_verdicts,
)
from inverter_achievability.rng import Stream, substream

logger = logging.getLogger(__name__)

MAX_DRAWS = 1_000_000
MIN_ACCEPTANCE = 0.01
DRAW_BATCH = 4096
SIGNIFICANCE = 0.01
PROGRESS_EVERY = 100
REGION_COLUMNS = ["p_ref_w", "q_ref_var", "achievable", "margin", "checker"]


class SamplingError(ValueError):
    pass


class Checker(str, Enum):
    CERTIFICATE = "certificate"
    STEADY_STATE = "steady-state"
    TRAJECTORY = "trajectory"


def _ordered(name: str, pair) -> tuple[float, float]:
    lo, hi = (float(v) for v in pair)
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
        raise ValueError(f"{name} must be an ordered finite pair, got {pair!r}")
    return lo, hi


@dataclass(frozen=True)
class SamplingConfig:
    p_range: tuple[float, float] = (0.0, 8000.0)
    q_range: tuple[float, float] = (-2500.0, 200.0)
    pf_range: tuple[float, float] = (0.95, 1.0)
    n_setpoints: int = 500
    k_box: tuple[float, float] = (-0.2, 0.2)
    n_gains: int = 2000
    seed: int = 0
    checker: Checker = Checker.TRAJECTORY
    include_baseline: bool = True

    def __post_init__(self) -> None:
        for name in ("p_range", "q_range", "pf_range", "k_box"):
            object.__setattr__(self, name, _ordered(name, getattr(self, name)))
        lo, hi = self.pf_range
        if lo < 0 or hi > 1:
            raise ValueError(f"pf_range must lie in [0, 1], got {self.pf_range}")
        if self.n_setpoints < 1 or self.n_gains < 1:
            raise ValueError("n_setpoints and n_gains must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        object.__setattr__(self, "checker", Checker(self.checker))

    def to_dict(self) -> dict:
        return {
            "p_range": list(self.p_range),
            "q_range": list(self.q_range),
            "pf_range": list(self.pf_range),
            "n_setpoints": self.n_setpoints,
            "k_box": list(self.k_box),
            "n_gains": self.n_gains,
            "seed": self.seed,
            "checker": self.checker.value,
            "include_baseline": self.include_baseline,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SamplingConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown sampling keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class SetpointSample:
    setpoints: tuple[Setpoint, ...]
    draws: int

    @property
    def acceptance(self) -> float:
        return len(self.setpoints) / self.draws


def power_factor_mask(p: np.ndarray, q: np.ndarray, pf_range: tuple[float, float]) -> np.ndarray:
    apparent = np.hypot(p, q)
    pf = np.divide(p, apparent, out=np.ones_like(p), where=apparent > 0)
    # the origin carries no power factor and always passes
    return (apparent == 0) | ((pf >= pf_range[0]) & (pf <= pf_range[1]))


def sample_setpoints(cfg: SamplingConfig, stream: int = Stream.SETPOINTS) -> SetpointSample:
    rng = substream(cfg.seed, stream)
    (p_lo, p_hi), (q_lo, q_hi) = cfg.p_range, cfg.q_range
    accepted: list[np.ndarray] = []
    n_accepted = 0
    draws = 0
    while n_accepted < cfg.n_setpoints:
        u = rng.random((DRAW_BATCH, 2))
        p = p_lo + u[:, 0] * (p_hi - p_lo)
        q = q_lo + u[:, 1] * (q_hi - q_lo)
        keep = np.flatnonzero(power_factor_mask(p, q, cfg.pf_range))
        need = cfg.n_setpoints - n_accepted
        if keep.size >= need:
            keep = keep[:need]
            draws += int(keep[-1]) + 1
        else:
            draws += DRAW_BATCH
        accepted.append(np.column_stack([p[keep], q[keep]]))
        n_accepted += keep.size
        if draws >= MAX_DRAWS and n_accepted < MIN_ACCEPTANCE * draws:
            raise SamplingError(
                f"only {n_accepted} of {draws} draws passed the power-factor filter; check the sampling ranges"
            )
    points = np.concatenate(accepted)
    setpoints = tuple(Setpoint(float(p), float(q)) for p, q in points)
    logger.info("sampled %d setpoints from %d draws (acceptance %.3f)", len(setpoints), draws, len(setpoints) / draws)
    return SetpointSample(setpoints, draws)


def sample_gains(cfg: SamplingConfig, count: int | None = None) -> list[Gain]:
    """Gain i has its own sub-stream, so the list prefix does not depend on count."""
    lo, hi = cfg.k_box
    count = cfg.n_gains if count is None else count
    return [Gain.from_matrix(substream(cfg.seed, Stream.GAINS, i).uniform(lo, hi, size=(2, 2))) for i in range(count)]


@dataclass(frozen=True)
class RateReport:
    gain: Gain
    checker: Checker
    n_achievable: int
    n_total: int
    verdicts: tuple[bool, ...] = ()
    margins: tuple[float, ...] = ()
    flags: tuple[str, ...] = ()

    @property
    def rate(self) -> float:
        return self.n_achievable / self.n_total if self.n_total else 0.0

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.n_achievable, self.n_total) if self.n_total else Fraction(0)

    @property
    def stable(self) -> bool:
        return "unstable" not in self.flags

    @property
    def slow(self) -> bool:
        return "slow" in self.flags

    @property
    def scored(self) -> bool:
        return self.stable and not self.slow

    @property
    def worst_margin(self) -> float | None:
        return min(self.margins) if self.margins else None


def evaluate_setpoints(
    k: Gain,
    setpoints: Sequence[Setpoint],
    checker: Checker,
    params: PlantParams,
    *,
    ensemble: Sequence[GridProfile] = (),
    integrator: IntegratorConfig = IntegratorConfig(),
    search: SearchConfig = SearchConfig(),
    x0=(0.0, 0.0),
    n_grid: int = DEFAULT_GRID,
) -> tuple[np.ndarray, np.ndarray, tuple[str, ...]]:
    """Per-setpoint (verdicts, margins, flags) under one checker."""
    checker = Checker(checker)
    if checker is Checker.STEADY_STATE:
        results = [steady_state_achievable(s, params, n_grid) for s in setpoints]
        return np.array([r.achievable for r in results], dtype=bool), np.array([r.margin for r in results]), ()
    if checker is Checker.CERTIFICATE:
        results = [check_setpoint(s, k, params, search) for s in setpoints]
        flags = ("inconclusive",) if any(r.inconclusive for r in results) else ()
        return np.array([r.achievable for r in results], dtype=bool), np.array([r.margin for r in results]), flags
    margins = trajectory_margins(x0, setpoint_array(setpoints), k, params, ensemble, integrator)
    return trajectory_verdicts(margins, params), margins, ()


def achievability_rate(
    k: Gain,
    setpoints: Sequence[Setpoint],
    checker: Checker,
    params: PlantParams,
    **options,
) -> RateReport:
    """S(K); non-stabilizing gains score 0 with flag "unstable", too-slow ones with "slow"."""
    checker = Checker(checker)
    n_total = len(setpoints)
    if checker is not Checker.STEADY_STATE and not is_stabilizing(k, params):
        return RateReport(k, checker, 0, n_total, flags=("unstable",))
    try:
        verdicts, margins, flags = evaluate_setpoints(k, setpoints, checker, params, **options)
    except SlowGainError:
        return RateReport(k, checker, 0, n_total, flags=("slow",))
    return RateReport(
        gain=k,
        checker=checker,
        n_achievable=int(verdicts.sum()),
        n_total=n_total,
        verdicts=tuple(bool(v) for v in verdicts),
        margins=tuple(float(m) for m in margins),
        flags=flags,
    )


@dataclass(frozen=True)
class SweepEntry:
    index: int
    report: RateReport

    def to_json(self) -> dict:
        report = self.report
        return {
            "index": self.index,
            "k": report.gain.to_json(),
            "stable": report.stable,
            "slow": report.slow,
            "rate": report.rate,
            "n_achievable": report.n_achievable,
            "n_total": report.n_total,
            "worst_margin": report.worst_margin,
            "checker": report.checker.value,
            "flags": list(report.flags),
        }


@dataclass(frozen=True)
class PairedComparison:
    """Exact McNemar test: does the best gain achieve strictly more setpoints than the baseline?"""

    gained: int
    lost: int
    p_value: float

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE


def paired_improvement(best: RateReport, baseline: RateReport) -> PairedComparison:
    if best.n_total != baseline.n_total:
        raise ValueError("paired comparison needs reports on the same setpoint sample")
    best_v = np.array(best.verdicts or (False,) * best.n_total, dtype=bool)
    base_v = np.array(baseline.verdicts or (False,) * baseline.n_total, dtype=bool)
    gained = int(np.sum(best_v & ~base_v))
    lost = int(np.sum(~best_v & base_v))
    if gained + lost == 0:
        return PairedComparison(0, 0, 1.0)
    p_value = binomtest(gained, gained + lost, 0.5, alternative="greater").pvalue
    return PairedComparison(gained, lost, float(p_value))


@dataclass(frozen=True)
class OptimizationResult:
    best_index: int
    sweep: tuple[SweepEntry, ...]
    sample: SetpointSample
    baseline: RateReport | None = None
    comparison: PairedComparison | None = None

    @property
    def best(self) -> RateReport:
        return self.sweep[self.best_index].report

    @property
    def n_rejected(self) -> int:
        return sum(1 for entry in self.sweep if not entry.report.scored)

    @property
    def relative_improvement(self) -> float | None:
        if self.baseline is None or self.baseline.n_achievable == 0:
            return None
        return self.best.n_achievable / self.baseline.n_achievable - 1.0

    def k11_curve(self) -> pd.DataFrame:
        """Rate against k11 for every scored gain."""
        rows = [
            {"k11": entry.report.gain.k[0][0], "rate": entry.report.rate}
            for entry in self.sweep
            if entry.report.scored
        ]
        return pd.DataFrame(rows, columns=["k11", "rate"]).sort_values("k11", kind="stable")


def _rank(entry: SweepEntry) -> tuple:
    report = entry.report
    margin = report.worst_margin if report.worst_margin is not None else -math.inf
    return (report.n_achievable, margin, -report.gain.frobenius, -entry.index)


def optimize_gain(
    cfg: SamplingConfig,
    params: PlantParams,
    *,
    candidates: Sequence[Gain] = (),
    threads: int = 1,
    **options,
) -> OptimizationResult:
    """
    Random search: score K = 0 (index 0, unless disabled), n_gains draws from
    k_box and any extra candidates on one shared setpoint sample; return the
    argmax of S(K), ties going to the larger worst margin, then the smaller
    Frobenius norm.
    """
    sample = sample_setpoints(cfg)
    gains = ([Gain.zero()] if cfg.include_baseline else []) + sample_gains(cfg) + list(candidates)
    logger.info("scoring %d gains on %d setpoints with the %s checker", len(gains), len(sample.setpoints), cfg.checker.value)

    def score(item: tuple[int, Gain]) -> SweepEntry:
        index, gain = item
        report = achievability_rate(gain, sample.setpoints, cfg.checker, params, **options)
        if (index + 1) % PROGRESS_EVERY == 0:
            logger.info("scored %d/%d gains", index + 1, len(gains))
        return SweepEntry(index, report)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        sweep = tuple(pool.map(score, enumerate(gains)))

    scored = [entry for entry in sweep if entry.report.scored]
    if not scored:
        raise SamplingError("every sampled gain was rejected as non-stabilizing or too slow")
    best = max(scored, key=_rank)
    logger.info(
        "best gain %s: S = %d/%d (%d gains rejected)",
        best.report.gain.to_json(),
        best.report.n_achievable,
        best.report.n_total,
        len(sweep) - len(scored),
    )

    baseline = sweep[0].report if cfg.include_baseline else None
    comparison = paired_improvement(best.report, baseline) if baseline is not None else None
    return OptimizationResult(best.index, sweep, sample, baseline, comparison)


# ---------------------------------------------------------------------------
# Region maps
# ---------------------------------------------------------------------------


def _cell_centers(lo: float, hi: float, n: int) -> np.ndarray:
    return lo + (np.arange(n) + 0.5) * (hi - lo) / n


@dataclass(frozen=True)
class GridSpec:
    """n_p x n_q equal cells over the box; each cell is evaluated at its center."""

    p_min: float = 0.0
    p_max: float = 8000.0
    q_min: float = -2500.0
    q_max: float = 200.0
    n_p: int = 41
    n_q: int = 28

    def __post_init__(self) -> None:
        _ordered("p range", (self.p_min, self.p_max))
        _ordered("q range", (self.q_min, self.q_max))
        if self.n_p < 2 or self.n_q < 2:
            raise ValueError("grid counts must be at least 2")

    def setpoints(self) -> list[Setpoint]:
        ps = _cell_centers(self.p_min, self.p_max, self.n_p)
        qs = _cell_centers(self.q_min, self.q_max, self.n_q)
        return [Setpoint(float(p), float(q)) for p in ps for q in qs]

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown grid keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class RegionMap:
    grid: GridSpec
    gain: Gain
    checker: Checker
    setpoints: tuple[Setpoint, ...]
    verdicts: tuple[bool, ...]
    margins: tuple[float, ...]
    flags: tuple[str, ...] = ()

    @property
    def area_fraction(self) -> float:
        return sum(self.verdicts) / len(self.verdicts)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "p_ref_w": [s.p_ref for s in self.setpoints],
                "q_ref_var": [s.q_ref for s in self.setpoints],
                "achievable": list(self.verdicts),
                "margin": list(self.margins),
                "checker": self.checker.value,
            },
            columns=REGION_COLUMNS,
        )


def map_region(
    k: Gain,
    grid: GridSpec,
    checker: Checker,
    params: PlantParams,
    *,
    threads: int = 1,
    **options,
) -> RegionMap:
    checker = Checker(checker)
    setpoints = grid.setpoints()
    rows = max(1, math.ceil(len(setpoints) / max(1, threads)))
    blocks = [setpoints[i : i + rows] for i in range(0, len(setpoints), rows)]

    def run(block: list[Setpoint]) -> RateReport:
        return achievability_rate(k, block, checker, params, **options)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        reports = list(pool.map(run, blocks))

    flags = tuple(dict.fromkeys(flag for r in reports for flag in r.flags))
    if "unstable" in flags or "slow" in flags:
        verdicts = (False,) * len(setpoints)
        margins = (math.nan,) * len(setpoints)
    else:
        verdicts = tuple(v for r in reports for v in r.verdicts)
        margins = tuple(m for r in reports for m in r.margins)
    region = RegionMap(grid, k, checker, tuple(setpoints), verdicts, margins, flags)
    logger.info("mapped %d setpoints with the %s checker: %.1f%% achievable", len(setpoints), checker.value, 100 * region.area_fraction)
    return region
