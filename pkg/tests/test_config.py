from __future__ import annotations

import json

import pytest

from inverter_achievability.certificate import SearchConfig
from inverter_achievability.config import ConfigError, RunConfig
from inverter_achievability.controller import GAIN_PRESETS, MIRRORED_REPORTED_GAIN, Gain
from inverter_achievability.model import ConstantProfile, PlantParams, SinusoidProfile
from inverter_achievability.montecarlo import Checker, GridSpec, SamplingConfig
from inverter_achievability.oracle import IntegratorConfig


def test_empty_document_is_the_default_run() -> None:
    cfg = RunConfig.from_json("{}")
    assert cfg == RunConfig()
    assert cfg.gain_or_zero == Gain.zero()
    assert cfg.out_dir == "runs"


def test_default_round_trip() -> None:
    cfg = RunConfig()
    assert RunConfig.from_json(cfg.to_json()) == cfg


def test_custom_round_trip() -> None:
    cfg = RunConfig(
        plant=PlantParams(r_ohm=0.2, vg_lo_v=100.0, vg_hi_v=120.0, u_lo_v=98.0, u_hi_v=125.0),
        sampling=SamplingConfig(n_setpoints=100, n_gains=50, seed=42, checker=Checker.CERTIFICATE),
        gain=MIRRORED_REPORTED_GAIN,
        grid=GridSpec(n_p=5, n_q=4),
        ensemble=(ConstantProfile(110.0), SinusoidProfile(mean=110.0, amplitude=5.0, period=1.0)),
        integrator=IntegratorConfig(dt=5e-5, horizon=0.3, max_horizon=1.5),
        search=SearchConfig(lambda_max=500.0, n_scan=32),
        out_dir="runs/custom",
    )
    again = RunConfig.from_json(cfg.to_json())
    assert again == cfg
    assert again.profiles() == cfg.ensemble
    assert json.loads(cfg.to_json())["sampling"]["checker"] == "certificate"


def test_default_profiles_follow_plant_and_integrator() -> None:
    cfg = RunConfig(integrator=IntegratorConfig(dt=1e-3, horizon=0.2, max_horizon=0.8))
    profiles = cfg.profiles()
    assert len(profiles) == 5
    walk = profiles[-1]
    assert walk.interval == 1e-3 and walk.span == 0.8
    options = cfg.checker_options()
    assert set(options) == {"ensemble", "integrator", "search"}


@pytest.mark.parametrize(
    "text",
    [
        "[1, 2]",
        "{not json",
        '{"plants": {}}',
        '{"plant": {"r_ohm": -1}}',
        '{"plant": {"omega": 314.0}}',
        '{"sampling": {"pf_range": [0.9, 1.2]}}',
        '{"gain": [[1, 2]]}',
        '{"ensemble": []}',
        '{"ensemble": [{"kind": "constant", "value": 200.0}]}',
        '{"ensemble": [{"kind": "square"}]}',
        '{"integrator": {"dt": -1}}',
        '{"search": {"lambda_max": 0}}',
        '{"grid": {"n_p": 1}}',
        '{"gain": "mirrored"}',
    ],
)
def test_bad_documents_raise_config_error(text: str) -> None:
    with pytest.raises(ConfigError):
        RunConfig.from_json(text)


def test_load_reports_missing_file(tmp_path) -> None:
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.json")


def test_load_from_file(write_config) -> None:
    path = write_config({"sampling": {"seed": 7}, "gain": [[0.08, 0.06], [-0.02, 0.16]]})
    cfg = RunConfig.load(path)
    assert cfg.sampling.seed == 7
    assert cfg.gain == MIRRORED_REPORTED_GAIN


def test_with_sampling_validates() -> None:
    cfg = RunConfig().with_sampling(seed=3, checker=Checker.STEADY_STATE)
    assert cfg.sampling.seed == 3
    assert cfg.sampling.checker is Checker.STEADY_STATE
    with pytest.raises(ConfigError):
        RunConfig().with_sampling(seed=-1)


@pytest.mark.parametrize("name", sorted(GAIN_PRESETS))
def test_load_gain_preset_from_file(write_config, name: str) -> None:
    cfg = RunConfig.load(write_config({"gain": name}))
    assert cfg.gain == GAIN_PRESETS[name]
    assert RunConfig.from_json(cfg.to_json()) == cfg


def test_gain_given_as_json_text() -> None:
    cfg = RunConfig.from_dict({"gain": "[[0.08, 0.06], [-0.02, 0.16]]"})
    assert cfg.gain == MIRRORED_REPORTED_GAIN
