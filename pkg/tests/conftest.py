from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from inverter_achievability.model import PlantParams
from inverter_achievability.oracle import IntegratorConfig


@pytest.fixture
def params() -> PlantParams:
    return PlantParams()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def short_integrator() -> IntegratorConfig:
    return IntegratorConfig(dt=1e-4, horizon=0.2, max_horizon=1.0)


@pytest.fixture
def write_config(tmp_path: Path):
    def _write(data: dict, name: str = "config.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return path

    return _write
