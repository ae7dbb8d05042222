"""
certificate.py
--------------
S-lemma certificate for setpoint achievability.

Over z = [d, P, Q] the premise "d lies in [vg_lo^2, vg_hi^2]" is one concave
quadratic q_a(z) >= 0, and each side of the voltage constraint is a quadratic
q_b(z) >= 0. The implication q_a >= 0 => q_b >= 0 holds if some lambda >= 0
makes the homogenized matrix of q_b - lambda q_a positive semidefinite.
Feasibility of that scalar-parameter LMI is decided by maximizing the smallest
eigenvalue over lambda (a concave function) with a grid pre-scan and a
golden-section refinement.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from inverter_achievability.controller import Gain, Setpoint, require_stabilizing
from inverter_achievability.model import PlantParams, input_matrices

logger = logging.getLogger(__name__)

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 50
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True, eq=False)
class QuadraticForm:
    """z' Q z + r' z + c over z = [d, P, Q]."""

    qmat: np.ndarray
    rvec: np.ndarray
    cscal: float

    def __post_init__(self) -> None:
        qmat = np.array(self.qmat, dtype=float)
        rvec = np.array(self.rvec, dtype=float).reshape(-1)
        if qmat.shape != (3, 3) or rvec.shape != (3,):
            raise ValueError("quadratic form needs a 3x3 matrix and a 3-vector")
        if not np.allclose(qmat, qmat.T, rtol=0.0, atol=1e-12 * max(1.0, np.abs(qmat).max())):
            raise ValueError("quadratic form matrix must be symmetric")
        object.__setattr__(self, "qmat", qmat)
        object.__setattr__(self, "rvec", rvec)
        object.__setattr__(self, "cscal", float(self.cscal))

    def evaluate(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return np.einsum("...i,ij,...j->...", z, self.qmat, z) + z @ self.rvec + self.cscal

    def homogeneous(self) -> np.ndarray:
        """4x4 matrix H with [z, 1]' H [z, 1] = value(z)."""
        h = np.empty((4, 4))
        h[:3, :3] = self.qmat
        h[:3, 3] = h[3, :3] = 0.5 * self.rvec
        h[3, 3] = self.cscal
        return h

    def shifted(self, delta: float) -> "QuadraticForm":
        return QuadraticForm(self.qmat, self.rvec, self.cscal + delta)


def build_qa(params: PlantParams) -> QuadraticForm:
    """(d - d_lo)(d_hi - d) >= 0."""
    d_lo, d_hi = params.d_lo, params.d_hi
    return QuadraticForm(np.diag([-1.0, 0.0, 0.0]), np.array([d_lo + d_hi, 0.0, 0.0]), -d_lo * d_hi)


def constraint_terms(x_ref: Setpoint, k: Gain, params: PlantParams) -> tuple[np.ndarray, np.ndarray]:
    """(v, M) with u = v - M z under the feedback law."""
    b_inv_a, b_inv_e = input_matrices(params)
    kmat = k.matrix
    v = (kmat - b_inv_a) @ x_ref.vector
    m = np.column_stack([b_inv_e, kmat])
    return v, m


def build_qb(x_ref: Setpoint, k: Gain, params: PlantParams) -> tuple[QuadraticForm, QuadraticForm]:
    """Forms of ||u||^2 - U_lo^2 d and U_hi^2 d - ||u||^2."""
    v, m = constraint_terms(x_ref, k, params)
    gram = m.T @ m
    cross = 2.0 * (m.T @ v)
    h_lo = np.array([params.u_lo_v**2, 0.0, 0.0])
    h_hi = np.array([params.u_hi_v**2, 0.0, 0.0])
    norm_v = float(v @ v)
    qb1 = QuadraticForm(gram, -cross - h_lo, norm_v)
    qb2 = QuadraticForm(-gram, cross + h_hi, -norm_v)
    return qb1, qb2


def lmi_matrix(qb: QuadraticForm, qa: QuadraticForm, lam) -> np.ndarray:
    """Homogenized q_b - lam q_a; an array of lam gives a stack of matrices."""
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0):
        raise ValueError("multiplier must be non-negative")
    return qb.homogeneous() - lam[..., None, None] * qa.homogeneous()


def jacobi_eigh(m, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS) -> tuple[np.ndarray, np.ndarray]:
    """
    Cyclic Jacobi eigen-decomposition of symmetric matrices.

    Accepts a stack (..., n, n) and rotates every matrix of the stack at once.
    Returns ascending eigenvalues (..., n) and eigenvectors as columns
    (..., n, n) with m = V diag(w) V'.
    """
    a = np.array(m, dtype=float)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {a.shape}")
    n = a.shape[-1]
    v = np.broadcast_to(np.eye(n), a.shape).copy()
    off_mask = ~np.eye(n, dtype=bool)
    threshold = tol * np.maximum(1.0, np.sqrt(np.sum(a * a, axis=(-2, -1))))

    for sweep in range(max_sweeps):
        off = np.sqrt(np.sum(np.where(off_mask, a * a, 0.0), axis=(-2, -1)))
        if np.all(off <= threshold):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[..., p, q]
                active = apq != 0.0
                safe = np.where(active, apq, 1.0)
                theta = (a[..., q, q] - a[..., p, p]) / (2.0 * safe)
                sign = np.where(theta >= 0.0, 1.0, -1.0)
                t = np.where(active, sign / (np.abs(theta) + np.hypot(1.0, theta)), 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                c_, s_ = c[..., None], s[..., None]

                col_p, col_q = a[..., :, p].copy(), a[..., :, q].copy()
                a[..., :, p] = c_ * col_p - s_ * col_q
                a[..., :, q] = s_ * col_p + c_ * col_q
                row_p, row_q = a[..., p, :].copy(), a[..., q, :].copy()
                a[..., p, :] = c_ * row_p - s_ * row_q
                a[..., q, :] = s_ * row_p + c_ * row_q
                vec_p, vec_q = v[..., :, p].copy(), v[..., :, q].copy()
                v[..., :, p] = c_ * vec_p - s_ * vec_q
                v[..., :, q] = s_ * vec_p + c_ * vec_q
    else:
        logger.warning("jacobi did not converge in %d sweeps", max_sweeps)

    w = np.diagonal(a, axis1=-2, axis2=-1).copy()
    order = np.argsort(w, axis=-1)
    w = np.take_along_axis(w, order, axis=-1)
    v = np.take_along_axis(v, order[..., None, :], axis=-1)
    return w, v


def min_eigenvalue(m) -> np.ndarray | float:
    m = np.asarray(m, dtype=float)
    if m.ndim < 2 or m.shape[-1] != m.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {m.shape}")
    scale = np.maximum(1.0, np.abs(m).max(axis=(-2, -1)))
    asym = np.abs(m - np.swapaxes(m, -1, -2)).max(axis=(-2, -1))
    if np.any(asym > 1e-12 * scale):
        raise ValueError("min_eigenvalue needs a symmetric matrix")
    w, _ = jacobi_eigh(m)
    smallest = w[..., 0]
    return float(smallest) if smallest.ndim == 0 else smallest


@dataclass(frozen=True)
class SearchConfig:
    """Multiplier search settings; lambda_max None means derive it per setpoint."""

    lambda_max: float | None = None
    tolerance: float = 1e-7
    n_scan: int = 64
    width: float = 1e-8

    def __post_init__(self) -> None:
        if self.lambda_max is not None and self.lambda_max <= 0:
            raise ValueError("lambda_max must be positive")
        if self.tolerance < 0 or self.width <= 0 or self.n_scan < 3:
            raise ValueError("search needs tolerance >= 0, width > 0 and n_scan >= 3")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "SearchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown search keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class SLemmaResult:
    feasible: bool
    lambda_star: float
    margin: float
    inconclusive: bool = False

    @property
    def flags(self) -> tuple[str, ...]:
        return ("inconclusive: enlarge lambda_max",) if self.inconclusive else ()


def equilibrated_pencil(qb: QuadraticForm, qa: QuadraticForm) -> tuple[np.ndarray, np.ndarray]:
    """
    (M0, M1) with D lmi_matrix(qb, qa, lam) D = M0 - lam M1, D = diag(1, 1, 1, 1/s)
    and s = sqrt|c_a|. The congruence keeps the PSD cone and brings the V^4
    corner entry to unit scale.
    """
    scale = math.sqrt(abs(qa.cscal)) or 1.0
    diag = np.array([1.0, 1.0, 1.0, 1.0 / scale])
    outer = np.outer(diag, diag)
    return qb.homogeneous() * outer, qa.homogeneous() * outer


def s_lemma_feasible(
    qb: QuadraticForm,
    qa: QuadraticForm,
    lambda_max: float,
    search: SearchConfig = SearchConfig(),
) -> SLemmaResult:
    """Maximize lambda_min(lmi_matrix(qb, qa, lam)) over lam in [0, lambda_max]."""
    if lambda_max <= 0:
        raise ValueError("lambda_max must be positive")
    base, slope = equilibrated_pencil(qb, qa)

    def margin(lam):
        return min_eigenvalue(base - np.asarray(lam)[..., None, None] * slope)

    grid = np.linspace(0.0, lambda_max, search.n_scan)
    values = margin(grid)
    i = int(np.argmax(values))
    best_lam, best_val = float(grid[i]), float(values[i])

    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, search.n_scan - 1)]
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1, f2 = margin(x1), margin(x2)
    while hi - lo > search.width:
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN * (hi - lo)
            f2 = margin(x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN * (hi - lo)
            f1 = margin(x1)
    for lam, val in ((x1, f1), (x2, f2)):
        if val > best_val:
            best_lam, best_val = float(lam), float(val)

    scale = 1.0 + np.abs(base - best_lam * slope).max()
    feasible = bool(best_val >= -search.tolerance * scale)
    inconclusive = not feasible and i == search.n_scan - 1
    if inconclusive:
        logger.debug("multiplier search peaked at lambda_max=%g", lambda_max)
    return SLemmaResult(feasible, best_lam, best_val, inconclusive)


def default_lambda_max(x_ref: Setpoint, k: Gain, params: PlantParams) -> float:
    v, _ = constraint_terms(x_ref, k, params)
    return 10.0 * (params.u_hi_v**2 + float(v @ v) / params.d_lo + 1.0)


@dataclass(frozen=True)
class CertificateVerdict:
    p_ref: float
    q_ref: float
    achievable: bool
    lambda1: float | None
    lambda2: float | None
    margin1: float
    margin2: float
    flags: tuple[str, ...] = ()

    @property
    def inconclusive(self) -> bool:
        return any(flag.startswith("inconclusive") for flag in self.flags)

    @property
    def margin(self) -> float:
        return min(self.margin1, self.margin2)

    def to_json(self) -> dict:
        return {
            "p_ref": self.p_ref,
            "q_ref": self.q_ref,
            "achievable": self.achievable,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "margin1": self.margin1,
            "margin2": self.margin2,
            "flags": list(self.flags),
        }


def check_setpoint(
    x_ref: Setpoint,
    k: Gain,
    params: PlantParams,
    search: SearchConfig = SearchConfig(),
) -> CertificateVerdict:
    require_stabilizing(k, params)
    lambda_max = search.lambda_max or default_lambda_max(x_ref, k, params)
    qa = build_qa(params)
    qb1, qb2 = build_qb(x_ref, k, params)
    lower = s_lemma_feasible(qb1, qa, lambda_max, search)
    upper = s_lemma_feasible(qb2, qa, lambda_max, search)
    flags = tuple(dict.fromkeys(lower.flags + upper.flags))
    return CertificateVerdict(
        p_ref=x_ref.p_ref,
        q_ref=x_ref.q_ref,
        achievable=lower.feasible and upper.feasible,
        lambda1=lower.lambda_star if lower.feasible else None,
        lambda2=upper.lambda_star if upper.feasible else None,
        margin1=lower.margin,
        margin2=upper.margin,
        flags=flags,
    )
