"""
config.py
---------
RunConfig: one JSON document holding every knob of an experiment. Built-in
defaults reproduce the 110 V / 50 Hz rig and the standard sampling box, so
an empty document (or no --config at all) is a valid run.

Precedence: defaults < config file < environment (.env) < command-line flags.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from inverter_achievability.certificate import SearchConfig
from inverter_achievability.controller import Gain, parse_gain
from inverter_achievability.model import (
    GridProfile,
    PlantParams,
    check_profile,
    default_ensemble,
    profile_from_dict,
)
from inverter_achievability.montecarlo import GridSpec, SamplingConfig
from inverter_achievability.oracle import IntegratorConfig

logger = logging.getLogger(__name__)

SECTIONS = ("plant", "sampling", "gain", "grid", "ensemble", "integrator", "search", "out_dir")
DEFAULT_OUT_DIR = "runs"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    plant: PlantParams = field(default_factory=PlantParams)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    gain: Gain | None = None
    grid: GridSpec = field(default_factory=GridSpec)
    # None: the default audit ensemble built from the plant bounds
    ensemble: tuple[GridProfile, ...] | None = None
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    out_dir: str = DEFAULT_OUT_DIR

    def __post_init__(self) -> None:
        if self.ensemble is not None:
            if not self.ensemble:
                raise ConfigError("ensemble must list at least one profile")
            for profile in self.ensemble:
                try:
                    check_profile(profile, self.plant)
                except ValueError as exc:
                    raise ConfigError(str(exc)) from exc

    @property
    def gain_or_zero(self) -> Gain:
        return self.gain if self.gain is not None else Gain.zero()

    def profiles(self) -> tuple[GridProfile, ...]:
        if self.ensemble is not None:
            return self.ensemble
        return default_ensemble(
            self.plant,
            dt=self.integrator.dt,
            span=self.integrator.max_horizon,
            seed=self.sampling.seed,
        )

    def checker_options(self) -> dict:
        """Keyword arguments shared by the Monte Carlo entry points."""
        return {"ensemble": self.profiles(), "integrator": self.integrator, "search": self.search}

    def to_dict(self) -> dict:
        return {
            "plant": self.plant.to_dict(),
            "sampling": self.sampling.to_dict(),
            "gain": self.gain.to_json() if self.gain is not None else None,
            "grid": self.grid.to_dict(),
            "ensemble": [p.to_dict() for p in self.ensemble] if self.ensemble is not None else None,
            "integrator": self.integrator.to_dict(),
            "search": self.search.to_dict(),
            "out_dir": self.out_dir,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("config document must be a JSON object")
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        try:
            kwargs = {}
            if "plant" in data:
                kwargs["plant"] = PlantParams.from_dict(data["plant"])
            if "sampling" in data:
                kwargs["sampling"] = SamplingConfig.from_dict(data["sampling"])
            if data.get("gain") is not None:
                gain = data["gain"]
                kwargs["gain"] = parse_gain(gain) if isinstance(gain, str) else Gain.from_json(gain)
            if "grid" in data:
                kwargs["grid"] = GridSpec.from_dict(data["grid"])
            if data.get("ensemble") is not None:
                kwargs["ensemble"] = tuple(profile_from_dict(p) for p in data["ensemble"])
            if "integrator" in data:
                kwargs["integrator"] = IntegratorConfig.from_dict(data["integrator"])
            if "search" in data:
                kwargs["search"] = SearchConfig.from_dict(data["search"])
            if "out_dir" in data:
                kwargs["out_dir"] = str(data["out_dir"])
            return cls(**kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError, AttributeError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        logger.info("Loaded config from %s", path)
        return cls.from_json(text)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def with_sampling(self, **changes) -> "RunConfig":
        try:
            sampling = dataclasses.replace(self.sampling, **changes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self.replace(sampling=sampling)
