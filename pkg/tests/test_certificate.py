from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from inverter_achievability.certificate import (
    CertificateVerdict,
    QuadraticForm,
    SearchConfig,
    build_qa,
    build_qb,
    check_setpoint,
    equilibrated_pencil,
    jacobi_eigh,
    lmi_matrix,
    min_eigenvalue,
    s_lemma_feasible,
)
from inverter_achievability.controller import REPORTED_GAIN, Gain, Setpoint, UnstableGainError, feedback_control
from inverter_achievability.model import PlantParams
from inverter_achievability.montecarlo import GridSpec, SamplingConfig, sample_setpoints
from inverter_achievability.oracle import falsifier_box, implication_counterexample, steady_state_achievable

ORIGIN = Setpoint(0.0, 0.0)


def random_symmetric(rng: np.random.Generator, n: int = 4) -> np.ndarray:
    a = rng.uniform(-1.0, 1.0, size=(n, n))
    return (a + a.T) / 2.0


def char_poly(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """det(xI - A) for every x."""
    shifted = x[:, None, None] * np.eye(a.shape[0]) - a
    return np.linalg.det(shifted)


def bisection_roots(a: np.ndarray) -> np.ndarray:
    # Gershgorin bound on the spectrum
    radius = np.abs(a).sum(axis=1).max() + 1.0
    grid = np.linspace(-radius, radius, 8001)
    values = char_poly(a, grid)
    brackets = np.flatnonzero(np.sign(values[:-1]) != np.sign(values[1:]))
    lo, hi = grid[brackets].copy(), grid[brackets + 1].copy()
    f_lo = char_poly(a, lo)
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        f_mid = char_poly(a, mid)
        left = np.sign(f_mid) == np.sign(f_lo)
        lo = np.where(left, mid, lo)
        f_lo = np.where(left, f_mid, f_lo)
        hi = np.where(left, hi, mid)
    return 0.5 * (lo + hi)


def test_interval_form_roots_and_vertex(params: PlantParams) -> None:
    qa = build_qa(params)
    scale = params.d_hi**2
    assert abs(qa.evaluate([params.d_lo, 5.0, -3.0])) <= 1e-12 * scale
    assert abs(qa.evaluate([params.d_hi, 0.0, 0.0])) <= 1e-12 * scale
    mid = 0.5 * (params.d_lo + params.d_hi)
    assert qa.evaluate([mid, 0.0, 0.0]) == pytest.approx(((params.d_hi - params.d_lo) / 2) ** 2, rel=1e-9)
    assert qa.evaluate([params.d_hi + 1.0, 0.0, 0.0]) < 0


def test_constraint_forms_sum_to_band(params: PlantParams, rng: np.random.Generator) -> None:
    for _ in range(200):
        x_ref = Setpoint(*rng.uniform(-5000, 5000, size=2))
        k = Gain.from_matrix(rng.uniform(-1, 1, size=(2, 2)))
        z = np.array([rng.uniform(params.d_lo, params.d_hi), *rng.uniform(-5000, 5000, size=2)])
        qb1, qb2 = build_qb(x_ref, k, params)
        total = qb1.evaluate(z) + qb2.evaluate(z)
        expected = (params.u_hi_v**2 - params.u_lo_v**2) * z[0]
        scale = abs(qb1.evaluate(z)) + params.u_hi_v**2 * z[0]
        assert abs(total - expected) <= 1e-9 * scale


def test_origin_lower_form_is_scalar(params: PlantParams) -> None:
    qb1, _ = build_qb(ORIGIN, Gain.zero(), params)
    for d in (params.d_lo, 12000.0, params.d_hi):
        assert qb1.evaluate([d, 0.0, 0.0]) == pytest.approx(d * d - params.u_lo_v**2 * d, rel=1e-12)


def test_forms_equal_direct_constraint_margins(params: PlantParams, rng: np.random.Generator) -> None:
    for _ in range(10_000):
        x_ref = Setpoint(*rng.uniform([0.0, -2500.0], [8000.0, 200.0]))
        k = Gain.from_matrix(rng.uniform(-0.5, 0.5, size=(2, 2)))
        z = np.array([rng.uniform(params.d_lo, params.d_hi), *rng.uniform(-1e4, 1e4, size=2)])
        qb1, qb2 = build_qb(x_ref, k, params)
        u = feedback_control(z[1:], x_ref, k, z[0], params)
        norm_sq = float(u @ u)
        scale = norm_sq + params.u_hi_v**2 * z[0]
        assert abs(qb1.evaluate(z) - (norm_sq - params.u_lo_v**2 * z[0])) <= 1e-6 * scale
        assert abs(qb2.evaluate(z) - (params.u_hi_v**2 * z[0] - norm_sq)) <= 1e-6 * scale


def test_quadratic_form_rejects_asymmetry() -> None:
    with pytest.raises(ValueError):
        QuadraticForm(np.array([[1.0, 2.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]), np.zeros(3), 0.0)


def test_lmi_matrix_structure(params: PlantParams) -> None:
    qa = build_qa(params)
    qb, _ = build_qb(Setpoint(900.0, 100.0), Gain(((0.05, 0.0), (0.0, 0.05))), params)
    np.testing.assert_array_equal(lmi_matrix(qb, qa, 0.0), qb.homogeneous())
    assert lmi_matrix(qb, qa, 2.5)[0, 0] == pytest.approx(qb.qmat[0, 0] + 2.5)
    m0, m1 = lmi_matrix(qb, qa, 0.0), lmi_matrix(qb, qa, 1.0)
    np.testing.assert_allclose(lmi_matrix(qb, qa, 3.7), m0 + 3.7 * (m1 - m0), rtol=1e-12, atol=1e-6)
    stack = lmi_matrix(qb, qa, np.array([0.0, 1.0]))
    assert stack.shape == (2, 4, 4)
    with pytest.raises(ValueError):
        lmi_matrix(qb, qa, -1.0)


def test_min_eigenvalue_examples() -> None:
    assert min_eigenvalue(np.eye(4)) == pytest.approx(1.0)
    assert min_eigenvalue(np.diag([3.0, 1.0, -2.0, 5.0])) == pytest.approx(-2.0)
    with pytest.raises(ValueError):
        min_eigenvalue(np.triu(np.ones((4, 4))))


def test_jacobi_matches_lapack_and_reconstructs(rng: np.random.Generator) -> None:
    stack = np.array([random_symmetric(rng) for _ in range(1000)])
    w, v = jacobi_eigh(stack)
    np.testing.assert_allclose(w, np.linalg.eigvalsh(stack), atol=1e-10)
    rebuilt = v @ (w[..., None] * np.swapaxes(v, -1, -2))
    assert np.abs(rebuilt - stack).max() <= 1e-10
    eye = np.swapaxes(v, -1, -2) @ v
    assert np.abs(eye - np.eye(4)).max() <= 1e-12
    assert np.all(np.diff(w, axis=-1) >= 0)


def test_jacobi_matches_characteristic_polynomial_roots(rng: np.random.Generator) -> None:
    checked = 0
    while checked < 1000:
        a = random_symmetric(rng)
        w, _ = jacobi_eigh(a)
        # bisection needs separated roots to bracket them on the grid
        if np.diff(np.linalg.eigvalsh(a)).min() < 0.1:
            continue
        roots = bisection_roots(a)
        assert roots.size == 4
        np.testing.assert_allclose(w, np.sort(roots), atol=1e-9)
        checked += 1


def test_self_implication_certifies_with_unit_multiplier(params: PlantParams) -> None:
    qa = build_qa(params)
    result = s_lemma_feasible(qa, qa, lambda_max=10.0)
    assert result.feasible
    assert result.lambda_star == pytest.approx(1.0, abs=1e-6)
    assert not result.inconclusive


def test_origin_lower_side_is_certified(params: PlantParams) -> None:
    qa = build_qa(params)
    qb1, qb2 = build_qb(ORIGIN, Gain.zero(), params)
    for qb in (qb1, qb2):
        result = s_lemma_feasible(qb, qa, lambda_max=1e3)
        assert result.feasible
        assert result.margin >= -1e-9


def test_shifted_constant_breaks_certificate(params: PlantParams) -> None:
    qa = build_qa(params)
    qb1, _ = build_qb(ORIGIN, Gain.zero(), params)
    result = s_lemma_feasible(qb1.shifted(-1e9), qa, lambda_max=1e3)
    assert not result.feasible
    assert result.margin < -1.0


def test_margin_is_concave_in_multiplier(params: PlantParams, rng: np.random.Generator) -> None:
    qa = build_qa(params)
    for _ in range(200):
        x_ref = Setpoint(*rng.uniform([0.0, -2500.0], [8000.0, 200.0]))
        k = Gain.from_matrix(rng.uniform(-0.2, 0.2, size=(2, 2)))
        qb = build_qb(x_ref, k, params)[rng.integers(2)]
        base, slope = equilibrated_pencil(qb, qa)
        lam = np.sort(rng.uniform(0.0, 50.0, size=3))
        f = min_eigenvalue(base - lam[:, None, None] * slope)
        chord = f[0] + (f[2] - f[0]) * (lam[1] - lam[0]) / (lam[2] - lam[0])
        assert f[1] >= chord - 1e-9


def test_feasible_multipliers_form_an_interval(params: PlantParams) -> None:
    qa = build_qa(params)
    qb1, _ = build_qb(ORIGIN, Gain.zero(), params)
    base, slope = equilibrated_pencil(qb1, qa)
    lam = np.linspace(0.0, 40.0, 401)
    feasible = min_eigenvalue(base - lam[:, None, None] * slope) >= -1e-12
    idx = np.flatnonzero(feasible)
    assert idx.size > 0
    assert np.all(np.diff(idx) == 1)
    result = s_lemma_feasible(qb1, qa, lambda_max=40.0)
    assert lam[idx[0]] - 0.1 <= result.lambda_star <= lam[idx[-1]] + 0.1


def test_small_lambda_max_is_inconclusive(params: PlantParams) -> None:
    qa = build_qa(params)
    qb1, _ = build_qb(ORIGIN, Gain.zero(), params)
    result = s_lemma_feasible(qb1, qa, lambda_max=1.0)
    assert not result.feasible
    assert result.inconclusive
    assert result.flags == ("inconclusive: enlarge lambda_max",)


def test_check_setpoint_examples(params: PlantParams) -> None:
    verdict = check_setpoint(ORIGIN, Gain.zero(), params)
    assert verdict.achievable
    assert verdict.lambda1 is not None and verdict.lambda2 is not None

    far = check_setpoint(Setpoint(1e6, 0.0), Gain.zero(), params)
    assert not far.achievable
    assert far.lambda1 is None or far.lambda2 is None

    with pytest.raises(UnstableGainError):
        check_setpoint(ORIGIN, REPORTED_GAIN, params)


def test_nonzero_gain_never_certifies_upper_side(params: PlantParams) -> None:
    # -M'M has negative P/Q diagonal entries once K != 0
    verdict = check_setpoint(ORIGIN, Gain(((0.05, 0.0), (0.0, 0.05))), params)
    assert not verdict.achievable
    assert verdict.lambda2 is None


def test_widening_input_band_keeps_certified_setpoints(params: PlantParams) -> None:
    wide = replace(params, u_lo_v=100.0, u_hi_v=120.0)
    setpoints = GridSpec(p_min=0.0, p_max=1000.0, q_min=-150.0, q_max=100.0, n_p=5, n_q=5).setpoints()
    narrow_verdicts = [check_setpoint(s, Gain.zero(), params).achievable for s in setpoints]
    wide_verdicts = [check_setpoint(s, Gain.zero(), wide).achievable for s in setpoints]
    assert any(narrow_verdicts)
    assert all(w for n, w in zip(narrow_verdicts, wide_verdicts) if n)
    # ||u_ss|| ~ 13243 at vg_hi: above 115.5 * vg_hi, below 120 * vg_hi
    index = setpoints.index(Setpoint(900.0, 75.0))
    assert not narrow_verdicts[index]
    assert wide_verdicts[index]


def test_verdict_json_keys(params: PlantParams) -> None:
    payload = check_setpoint(ORIGIN, Gain.zero(), params, SearchConfig(lambda_max=1e3)).to_json()
    assert set(payload) == {"p_ref", "q_ref", "achievable", "lambda1", "lambda2", "margin1", "margin2", "flags"}
    assert CertificateVerdict(0.0, 0.0, False, None, None, -1.0, -2.0, ("inconclusive: x",)).inconclusive


@pytest.mark.slow
def test_certificate_agrees_with_steady_state_sweep_at_zero_gain(params: PlantParams) -> None:
    sample = sample_setpoints(SamplingConfig(n_setpoints=200, seed=11))
    qa = build_qa(params)
    disagreements = []
    for setpoint in sample.setpoints:
        certified = check_setpoint(setpoint, Gain.zero(), params)
        steady = steady_state_achievable(setpoint, params)
        # the certificate tolerance only blurs verdicts within a hair of the boundary
        if abs(steady.margin) < 0.1:
            continue
        if certified.achievable != steady.achievable:
            disagreements.append(setpoint)
        if certified.achievable:
            assert steady.achievable
            for qb in build_qb(setpoint, Gain.zero(), params):
                assert implication_counterexample(qa, qb, falsifier_box(params), 100_000, seed=5) is None
    assert disagreements == []
