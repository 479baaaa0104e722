"""
Range test (RT) and no-response test (NRT) indicators.

Both tests work on the Gram-aware singular system of R for a test domain G.
The RT follows the Tikhonov path φ_α and classifies by the growth of ‖φ_α‖
as α → 0; the NRT evaluates the supremum of |⟨ζ, ∂νw⟩| over ‖R*ζ‖ <= 1 on a
ladder of spectral truncations and classifies by its growth.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from app.errors import ConsistencyError, DegenerateOperatorError, ParameterError
from app.forward import (
    CauchyData,
    DoubleLayerField,
    HarmonicField,
    cauchy_continuation,
    regular_part_field,
)
from app.geometry import BoundaryCurve, TestDomain, ensure_inside
from app.green import MAX_DERIVATIVE_ORDER
from app.operators import (
    DiscreteOperator,
    SingularSystem,
    assemble_R,
    assemble_W,
    singular_system,
    tikhonov_filter,
    tikhonov_solve,
)

logger = logging.getLogger(__name__)

DEFAULT_SLOPE_THRESHOLD = 0.05
DEFAULT_WINDOW = 10
MIN_WINDOW = 3
DEFAULT_TRUNCATION = 1e-12
NRT_LADDER = tuple(10.0 ** (-6.0 - 0.5 * k) for k in range(13))
MONOTONE_RTOL = 1e-8
TAYLOR_DIRECTIONS = 32


class Classification(str, Enum):
    FINITE = "finite"
    INFINITE = "infinite"


@dataclass(frozen=True)
class RegularizationSchedule:
    """Geometric schedule α_k = α₀·q^k, k = 0..K"""

    alpha0: float = 1e-2
    ratio: float = 0.5
    steps: int = 40

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ParameterError(f"alpha0 must be positive, got {self.alpha0}")
        if not 0.0 < self.ratio < 1.0:
            raise ParameterError(f"ratio must lie in (0, 1), got {self.ratio}")
        if self.steps < DEFAULT_WINDOW:
            raise ParameterError(f"schedule needs at least {DEFAULT_WINDOW} steps, got {self.steps}")

    @property
    def alphas(self) -> np.ndarray:
        return self.alpha0 * self.ratio ** np.arange(self.steps + 1)

    @property
    def final_alpha(self) -> float:
        return float(self.alphas[-1])


@dataclass(frozen=True)
class RegularizationPath:
    """Norms, residuals and successive differences along a Tikhonov path"""

    alphas: np.ndarray
    norms: np.ndarray
    residuals: np.ndarray
    diffs: np.ndarray
    final_density: Optional[np.ndarray] = field(default=None, repr=False)
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.alphas)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alphas": self.alphas.tolist(),
            "norms": self.norms.tolist(),
            "residuals": self.residuals.tolist(),
            "diffs": self.diffs.tolist(),
            "stopped_early": self.stopped_early,
        }


@dataclass(frozen=True)
class IndicatorResult:
    """Indicator value with its finiteness decision"""

    value: float
    classification: Classification
    slope: float
    kind: str = "rt"
    path: Optional[RegularizationPath] = field(default=None, repr=False)
    ladder: Optional[Tuple[Tuple[float, float], ...]] = None

    @property
    def is_finite(self) -> bool:
        return self.classification is Classification.FINITE

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "value": self.value if math.isfinite(self.value) else "inf",
            "classification": self.classification.value,
            "slope": self.slope,
        }


def _loglog_slope(x: np.ndarray, y: np.ndarray) -> float:
    tiny = np.finfo(float).tiny
    slope, _ = np.polyfit(np.log(x), np.log(np.maximum(y, tiny)), 1)
    return float(slope)


def _morozov_cut(residuals: np.ndarray, level: Optional[float]) -> int:
    """Length of the path kept under the discrepancy principle"""
    if level is None:
        return len(residuals)
    below = np.nonzero(residuals <= level)[0]
    if len(below) == 0:
        return len(residuals)
    return max(int(below[0]) + 1, MIN_WINDOW)


def rt_path(
    op: DiscreteOperator,
    b: np.ndarray,
    schedule: RegularizationSchedule,
    truncation: Optional[float] = None,
    system: Optional[SingularSystem] = None,
    discrepancy: Optional[float] = None,
) -> RegularizationPath:
    """
    Tikhonov path φ_{α_k} for R φ = b

    Args:
        op: Operator R for one test domain
        b: ∂νw sampled on the range curve
        schedule: Regularization schedule
        truncation: Optional relative λ cut applied to every α
        system: Precomputed singular system of op
        discrepancy: Morozov level; the path stops at the first α whose
            residual drops below it

    Returns:
        RegularizationPath with norms in the domain Gram
    """
    b = np.asarray(b, dtype=float)
    if b.shape != (op.range_space.dim,):
        raise ParameterError("b must live on the range curve of the operator")
    system = system or singular_system(op)
    coefficients = system.coefficients(b)
    energy = system.range_energy(b)
    kept = system.kept(truncation)
    outside = max(energy - float(np.sum(coefficients[kept] ** 2)), 0.0)

    alphas = schedule.alphas
    norms = np.empty(len(alphas))
    residuals = np.empty(len(alphas))
    diffs = np.zeros(len(alphas))
    previous = None
    for k, alpha in enumerate(alphas):
        factors = tikhonov_filter(system, float(alpha), truncation)
        weighted = factors * coefficients
        norms[k] = np.linalg.norm(weighted)
        damping = np.where(kept, alpha / (alpha + system.lam), 0.0)
        residuals[k] = math.sqrt(float(np.sum((damping * coefficients)[kept] ** 2)) + outside)
        if previous is not None:
            diffs[k] = np.linalg.norm(weighted - previous)
        previous = weighted

    length = _morozov_cut(residuals, discrepancy)
    stopped = length < len(alphas)
    if stopped:
        logger.info("Morozov stop at alpha=%.3e (level %.3e)", alphas[length - 1], discrepancy)
    final = tikhonov_solve(op, b, float(alphas[length - 1]), truncation=truncation, system=system)
    return RegularizationPath(
        alphas=alphas[:length],
        norms=norms[:length],
        residuals=residuals[:length],
        diffs=diffs[:length],
        final_density=final,
        stopped_early=stopped,
    )


def _check_monotone(norms: np.ndarray) -> None:
    drops = norms[:-1] - norms[1:]
    limit = MONOTONE_RTOL * np.maximum(norms[:-1], np.finfo(float).tiny)
    if np.any(drops > limit):
        index = int(np.argmax(drops - limit))
        raise ConsistencyError(
            "regularized norms decrease along the path",
            {"index": index, "before": float(norms[index]), "after": float(norms[index + 1])},
        )


def classify_path(
    path: RegularizationPath,
    slope_threshold: float = DEFAULT_SLOPE_THRESHOLD,
    window: int = DEFAULT_WINDOW,
) -> IndicatorResult:
    """
    Finiteness decision from the tail growth of ‖φ_α‖

    Args:
        path: Regularization path
        slope_threshold: Largest log-log slope still read as bounded
        window: Number of trailing path points in the fit

    Returns:
        IndicatorResult; value is the last norm when finite
    """
    if len(path) < window:
        raise ParameterError(f"path has {len(path)} points, window needs {window}")
    norms = path.norms
    _check_monotone(norms)
    if norms[-1] == 0.0:
        return IndicatorResult(value=0.0, classification=Classification.FINITE, slope=0.0, path=path)

    slope = _loglog_slope(1.0 / path.alphas[-window:], norms[-window:])
    if slope < slope_threshold:
        return IndicatorResult(value=float(norms[-1]), classification=Classification.FINITE, slope=slope, path=path)
    return IndicatorResult(value=math.inf, classification=Classification.INFINITE, slope=slope, path=path)


def discrepancy_level(data: CauchyData, op: DiscreteOperator, factor: Optional[float]) -> Optional[float]:
    if factor is None or data.noise is None:
        return None
    return factor * op.range_space.norm(data.noise)


def rt_indicator(
    data: CauchyData,
    g: TestDomain,
    schedule: Optional[RegularizationSchedule] = None,
    slope_threshold: float = DEFAULT_SLOPE_THRESHOLD,
    window: int = DEFAULT_WINDOW,
    truncation: Optional[float] = None,
    morozov_factor: Optional[float] = None,
) -> IndicatorResult:
    """
    Range-test indicator of one test domain

    Args:
        data: Cauchy data on the unit circle
        g: Test domain strictly inside Ω
        schedule: Regularization schedule (default α₀=1e-2, q=0.5, K=40)
        slope_threshold: Finiteness threshold on the tail slope
        window: Tail window
        truncation: Optional relative λ cut
        morozov_factor: Enables discrepancy stopping for noisy data

    Returns:
        IndicatorResult of kind "rt"
    """
    schedule = schedule or RegularizationSchedule()
    ensure_inside(g, data.omega, label=f"test domain {g.id}")
    op = assemble_R(g.curve, data.omega)
    path = rt_path(
        op,
        data.dnu_w,
        schedule,
        truncation=truncation,
        discrepancy=discrepancy_level(data, op, morozov_factor),
    )
    result = classify_path(path, slope_threshold, min(window, len(path)))
    logger.debug("rt %s: %s slope=%.3f", g.id, result.classification.value, result.slope)
    return result


def classify_differences(
    path: RegularizationPath,
    slope_threshold: float = DEFAULT_SLOPE_THRESHOLD,
    window: int = DEFAULT_WINDOW,
) -> IndicatorResult:
    """Finiteness decision from ‖φ_{α_k} − φ_{α_{k−1}}‖; value is the last difference"""
    diffs = path.diffs[1:]
    alphas = path.alphas[1:]
    if len(diffs) < MIN_WINDOW:
        raise ParameterError("path too short for the difference statistic")
    window = min(window, len(diffs))
    if not np.any(diffs[-window:]):
        return IndicatorResult(value=0.0, classification=Classification.FINITE, slope=0.0, kind="rt_variant", path=path)

    slope = _loglog_slope(1.0 / alphas[-window:], diffs[-window:])
    if slope < slope_threshold:
        return IndicatorResult(
            value=float(diffs[-1]), classification=Classification.FINITE, slope=slope, kind="rt_variant", path=path
        )
    return IndicatorResult(value=math.inf, classification=Classification.INFINITE, slope=slope, kind="rt_variant", path=path)


def rt_variant_indicator(
    data: CauchyData,
    g: TestDomain,
    schedule: Optional[RegularizationSchedule] = None,
    slope_threshold: float = DEFAULT_SLOPE_THRESHOLD,
    window: int = DEFAULT_WINDOW,
) -> IndicatorResult:
    """Range test read through the Cauchy behaviour of the path instead of its norm"""
    schedule = schedule or RegularizationSchedule()
    ensure_inside(g, data.omega, label=f"test domain {g.id}")
    op = assemble_R(g.curve, data.omega)
    return classify_differences(rt_path(op, data.dnu_w, schedule), slope_threshold, window)


def nrt_pre_indicator(
    op: DiscreteOperator,
    b: np.ndarray,
    truncation: float = DEFAULT_TRUNCATION,
    system: Optional[SingularSystem] = None,
) -> float:
    """
    sup |⟨ζ, b⟩| over ‖R*ζ‖ <= 1, restricted to modes with λ_n >= τλ₁

    In finite dimensions the supremum is attained and equals
    sqrt(Σ b_n²/λ_n) with b_n = ⟨u_n, b⟩.

    Args:
        op: Operator R
        b: ∂νw on the range curve
        truncation: Relative λ cut τ
        system: Precomputed singular system

    Returns:
        J(τ)
    """
    system = system or singular_system(op)
    if system.rank == 0 or not system.lam[0] > 0:
        raise DegenerateOperatorError("operator has no nonzero singular values")
    kept = system.kept(truncation)
    if not np.any(kept):
        raise DegenerateOperatorError("every mode is truncated", {"truncation": truncation})
    coefficients = system.coefficients(b)[kept]
    return float(np.sqrt(np.sum(coefficients**2 / system.lam[kept])))


def classify_ladder(
    ladder: Sequence[Tuple[float, float]],
    slope_threshold: float = DEFAULT_SLOPE_THRESHOLD,
) -> IndicatorResult:
    """Finiteness decision from J over a truncation ladder"""
    taus = np.array([tau for tau, _ in ladder])
    values = np.array([value for _, value in ladder])
    ladder = tuple((float(t), float(v)) for t, v in ladder)
    if values[-1] == 0.0:
        return IndicatorResult(value=0.0, classification=Classification.FINITE, slope=0.0, kind="nrt", ladder=ladder)
    slope = _loglog_slope(1.0 / taus, values)
    if slope < slope_threshold:
        return IndicatorResult(
            value=float(values[-1]), classification=Classification.FINITE, slope=slope, kind="nrt", ladder=ladder
        )
    return IndicatorResult(value=math.inf, classification=Classification.INFINITE, slope=slope, kind="nrt", ladder=ladder)


def nrt_indicator(
    data: CauchyData,
    g: TestDomain,
    truncations: Sequence[float] = NRT_LADDER,
    slope_threshold: float = DEFAULT_SLOPE_THRESHOLD,
) -> IndicatorResult:
    """
    No-response-test indicator of one test domain

    Args:
        data: Cauchy data on the unit circle
        g: Test domain strictly inside Ω
        truncations: Decreasing τ ladder
        slope_threshold: Finiteness threshold on the ladder slope

    Returns:
        IndicatorResult of kind "nrt"; value is J at the smallest τ when finite
    """
    ensure_inside(g, data.omega, label=f"test domain {g.id}")
    op = assemble_R(g.curve, data.omega)
    system = singular_system(op)
    ladder = [(tau, nrt_pre_indicator(op, data.dnu_w, tau, system)) for tau in truncations]
    result = classify_ladder(ladder, slope_threshold)
    logger.debug("nrt %s: %s slope=%.3f", g.id, result.classification.value, result.slope)
    return result


def duality_gap(
    op: DiscreteOperator,
    b: np.ndarray,
    schedule: RegularizationSchedule,
    truncation: float = DEFAULT_TRUNCATION,
    system: Optional[SingularSystem] = None,
    eps: float = 1e-300,
) -> float:
    """
    Relative gap |‖φ_{α_K}‖ − J(τ)| / J(τ) with one truncation on both sides

    Returns:
        Non-negative gap; 0 when b vanishes
    """
    system = system or singular_system(op)
    phi = tikhonov_solve(op, b, schedule.final_alpha, truncation=truncation, system=system)
    norm = op.domain_space.norm(phi)
    sup = nrt_pre_indicator(op, b, truncation, system)
    if sup == 0.0 and norm == 0.0:
        return 0.0
    return abs(norm - sup) / max(sup, eps)


def green_identity_check(
    data: CauchyData,
    true_d: BoundaryCurve,
    phi: np.ndarray,
    v_field: Optional[HarmonicField] = None,
    dnu_w_on_d: Optional[np.ndarray] = None,
) -> float:
    """
    Relative difference between the ∂Ω and ∂D forms of ∮ W[φ]∂νw

    ∮_{∂Ω} W[φ] ∂νw = ∮_{∂D} (W[φ] ∂νw⁺ + v ∂νW[φ]), with W[φ] taken as its
    interior trace on ∂Ω and ν pointing out of D on ∂D.

    Args:
        data: Cauchy data with the forward solution attached, unless the
            obstacle fields are given explicitly
        true_d: Ground-truth obstacle boundary
        phi: Density on ∂Ω
        v_field: Obstacle-free solution v
        dnu_w_on_d: Exterior normal derivative of w at the true_d nodes

    Returns:
        Relative difference (0 when both sides vanish)
    """
    phi = np.asarray(phi, dtype=float)
    if v_field is None or dnu_w_on_d is None:
        solution = data.solution
        if solution is None:
            raise ParameterError("ground-truth fields are required for the Green identity check")
        if solution.obstacle.n != true_d.n:
            raise ParameterError("true_d does not match the obstacle of the forward solve")
        v_field = v_field or solution.v_field
        dnu_w_on_d = solution.dnu_w_on_obstacle() if dnu_w_on_d is None else dnu_w_on_d

    omega = data.omega
    outer_trace = assemble_W(omega).matrix @ phi
    outer = float(omega.weights @ (outer_trace * data.dnu_w))

    layer = DoubleLayerField(omega, phi)
    inner_integrand = layer.evaluate(true_d.nodes) * np.asarray(dnu_w_on_d) + v_field.evaluate(
        true_d.nodes
    ) * layer.normal_derivative(true_d.nodes, true_d.normals)
    inner = float(true_d.weights @ inner_integrand)

    scale = max(abs(outer), abs(inner))
    if scale == 0.0:
        return 0.0
    return abs(outer - inner) / scale


@dataclass(frozen=True)
class TaylorDiagnostic:
    """a_ℓ(z) = ρ^ℓ sup_h |(h·∇)^ℓ w(z)| / ℓ! for ℓ = 0..ℓ_max"""

    z: Tuple[float, float]
    rho: float
    continuation: np.ndarray
    regular_part: np.ndarray

    def is_growing(self, start: int = 4, stop: int = 10) -> bool:
        tail = self.continuation[start : stop + 1]
        return bool(np.all(np.diff(tail) > 0))

    def is_non_increasing(self, start: int = 4, stop: int = 10) -> bool:
        tail = self.continuation[start : stop + 1]
        return bool(np.all(np.diff(tail) <= 1e-14 * max(float(np.max(tail)), 1.0)))


def _taylor_sequence(field_: HarmonicField, z: np.ndarray, rho: float, ell_max: int, directions: np.ndarray) -> np.ndarray:
    sequence = np.empty(ell_max + 1)
    sequence[0] = abs(float(field_.evaluate(z)[0]))
    for ell in range(1, ell_max + 1):
        values = [abs(field_.derivative(h, ell, z)) for h in directions]
        sequence[ell] = rho**ell * max(values) / math.factorial(ell)
    return sequence


def taylor_growth_diagnostic(
    data: CauchyData,
    z,
    rho: float,
    ell_max: int = 10,
    h=None,
    n_directions: int = TAYLOR_DIRECTIONS,
) -> TaylorDiagnostic:
    """
    Scaled Taylor coefficients of w at z

    Bounded coefficients indicate a harmonic continuation on disk(z, ρ);
    growth means a singularity of the continued w lies within ρ of z.

    Args:
        data: Cauchy data on the unit circle
        z: Interior point
        rho: Radius with |z| + ρ < 1
        ell_max: Highest order, at most 12
        h: Fixed unit direction, or None to sample the sup over directions
        n_directions: Number of equi-angular sample directions

    Returns:
        TaylorDiagnostic for the continued w and for its regular part
    """
    if ell_max < 0 or ell_max > MAX_DERIVATIVE_ORDER:
        raise ParameterError(f"ell_max must be in [0, {MAX_DERIVATIVE_ORDER}], got {ell_max}")
    z = np.asarray(z, dtype=float)
    if not rho > 0 or np.linalg.norm(z) + rho >= 1.0:
        raise ParameterError("disk(z, rho) must lie inside the unit disk", {"z": z.tolist(), "rho": rho})

    if h is None:
        angles = 2.0 * np.pi * np.arange(n_directions) / n_directions
        directions = np.column_stack([np.cos(angles), np.sin(angles)])
    else:
        h = np.asarray(h, dtype=float)
        if abs(np.linalg.norm(h) - 1.0) > 1e-12:
            raise ParameterError("direction h must be a unit vector", {"h": h.tolist()})
        directions = h[None, :]

    return TaylorDiagnostic(
        z=(float(z[0]), float(z[1])),
        rho=float(rho),
        continuation=_taylor_sequence(cauchy_continuation(data), z, rho, ell_max, directions),
        regular_part=_taylor_sequence(regular_part_field(data), z, rho, ell_max, directions),
    )
