"""
Forward problem: synthetic Cauchy data for Δu = 0 in Ω∖D̄, u = 0 on ∂D, u = f on ∂Ω.

The field is split as u = v + w where v solves the obstacle-free problem in Ω
(double layer on ∂Ω) and w = S_𝒢[ψ] is a single layer on ∂D with the disk
Green function, fixed by S_𝒢ψ = −v on ∂D. Then w = 0 on ∂Ω automatically,
∂νw|∂Ω = R_D ψ and the exterior flux of u on ∂D is −ψ.
"""
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from math import factorial
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np
from scipy import linalg
from scipy.spatial import ConvexHull, Delaunay
from scipy.spatial.distance import cdist

from app.errors import GeometryError, ParameterError, SolverError
from app.geometry import BoundaryCurve, CurveKind, ensure_inside, make_circle
from app.green import (
    MAX_DERIVATIVE_ORDER,
    fundamental_holomorphic_derivative,
    fundamental_matrix,
    green_gradient_x,
    green_holomorphic_derivative,
    poisson_kernel,
)
from app.operators import (
    assemble_single_layer,
    assemble_W,
    double_layer_field_matrix,
    require_unit_circle,
    single_layer_field_matrix,
)

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12


def _complex(points) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return pts[:, 0] + 1j * pts[:, 1]


def _check_order(order: int) -> None:
    if order < 0 or order > MAX_DERIVATIVE_ORDER:
        raise ParameterError(f"derivative order must be in [0, {MAX_DERIVATIVE_ORDER}], got {order}")


class HarmonicField(ABC):
    """
    Harmonic function u = Re F with F holomorphic away from the sources.

    Subclasses supply F^(ℓ) (ℓ >= 1) and the point values; gradients and
    directional derivatives follow from (h·∇)^ℓ Re F = Re(η^ℓ F^(ℓ)),
    η = h₁ + i h₂.
    """

    @abstractmethod
    def holomorphic_derivative(self, z: complex, order: int) -> complex:
        pass

    @abstractmethod
    def evaluate(self, points) -> np.ndarray:
        pass

    def gradient(self, points) -> np.ndarray:
        derivative = np.array([self.holomorphic_derivative(z, 1) for z in _complex(points)])
        return np.column_stack([derivative.real, -derivative.imag])

    def normal_derivative(self, points, normals) -> np.ndarray:
        return np.einsum("ij,ij->i", self.gradient(points), np.atleast_2d(normals))

    def derivative(self, h, order: int, z) -> float:
        """(h·∇)^ℓ of the field at z"""
        _check_order(order)
        if order == 0:
            return float(self.evaluate(np.asarray(z, dtype=float))[0])
        eta = complex(h[0], h[1])
        zc = complex(z[0], z[1])
        return float(np.real(eta**order * self.holomorphic_derivative(zc, order)))

    def __add__(self, other: "HarmonicField") -> "HarmonicField":
        return CombinedField([(1.0, self), (1.0, other)])

    def __sub__(self, other: "HarmonicField") -> "HarmonicField":
        return CombinedField([(1.0, self), (-1.0, other)])


class CombinedField(HarmonicField):
    def __init__(self, terms: List[Tuple[float, HarmonicField]]):
        self.terms = terms

    def holomorphic_derivative(self, z: complex, order: int) -> complex:
        return sum(sign * term.holomorphic_derivative(z, order) for sign, term in self.terms)

    def evaluate(self, points) -> np.ndarray:
        return sum(sign * term.evaluate(points) for sign, term in self.terms)

    def gradient(self, points) -> np.ndarray:
        return sum(sign * term.gradient(points) for sign, term in self.terms)


class DoubleLayerField(HarmonicField):
    """W[φ] = Re F with F(ζ) = (1/2π) Σ w_j φ_j ν_j / (ζ − y_j)"""

    def __init__(self, curve: BoundaryCurve, density: np.ndarray, trace: Optional[np.ndarray] = None):
        self.curve = curve
        self.density = np.asarray(density, dtype=float)
        self.trace = None if trace is None else np.asarray(trace, dtype=float)
        self._coef = curve.weights * self.density * curve.complex_normals / (2.0 * np.pi)

    def holomorphic_derivative(self, z: complex, order: int) -> complex:
        _check_order(order)
        sign = (-1) ** order * factorial(order)
        return complex(np.sum(self._coef * sign / (z - self.curve.complex_nodes) ** (order + 1)))

    def evaluate(self, points) -> np.ndarray:
        return double_layer_field_matrix(self.curve, np.atleast_2d(points)) @ self.density

    def boundary_flux(self) -> np.ndarray:
        """∂νv at the curve nodes through the spectral Dirichlet-to-Neumann map"""
        if self.curve.kind is not CurveKind.CIRCLE or self.trace is None:
            raise GeometryError("boundary flux is available for circular boundaries only")
        n = self.curve.n
        k = np.abs(np.fft.fftfreq(n, d=1.0 / n))
        return np.real(np.fft.ifft(k * np.fft.fft(self.trace))) / self.curve.shape["radius"]


class GreenSingleLayerField(HarmonicField):
    """S_𝒢[ψ](x) = Σ w_j ψ_j 𝒢(x, y_j)"""

    def __init__(self, curve: BoundaryCurve, density: np.ndarray):
        self.curve = curve
        self.density = np.asarray(density, dtype=float)
        self._coef = curve.weights * self.density

    def holomorphic_derivative(self, z: complex, order: int) -> complex:
        return complex(np.sum(self._coef * green_holomorphic_derivative(self.curve.complex_nodes, z, order)))

    def evaluate(self, points) -> np.ndarray:
        return single_layer_field_matrix(self.curve, np.atleast_2d(points)) @ self.density

    def gradient(self, points) -> np.ndarray:
        return np.einsum("ijk,j->ik", green_gradient_x(np.atleast_2d(points), self.curve.nodes), self._coef)


class FundamentalSingleLayerField(HarmonicField):
    """Σ w_j g_j Φ(x, y_j) with the free-space kernel"""

    def __init__(self, curve: BoundaryCurve, density: np.ndarray):
        self.curve = curve
        self.density = np.asarray(density, dtype=float)
        self._coef = curve.weights * self.density

    def holomorphic_derivative(self, z: complex, order: int) -> complex:
        return complex(np.sum(self._coef * fundamental_holomorphic_derivative(self.curve.complex_nodes, z, order)))

    def evaluate(self, points) -> np.ndarray:
        return fundamental_matrix(np.atleast_2d(points), self.curve.nodes) @ self._coef


def _falling_factorial(powers: np.ndarray, order: int) -> np.ndarray:
    result = np.ones(len(powers))
    for i in range(order):
        result *= powers - i
    return result


class LaurentField(HarmonicField):
    """
    Re of H(ζ) = constant + log_coef·log ζ + Σ_k c_k ζ^{p_k}, harmonic on ℂ∖{0}.

    Closed-form fields on circular geometry (annulus oracle, Cauchy
    continuation from outer data) all take this form.
    """

    def __init__(self, constant: float = 0.0, log_coef: float = 0.0, terms: Optional[Mapping[int, complex]] = None):
        self.constant = float(constant)
        self.log_coef = float(log_coef)
        terms = {p: c for p, c in (terms or {}).items() if c != 0}
        self.powers = np.array(sorted(terms), dtype=int)
        self.coefs = np.array([terms[p] for p in self.powers], dtype=complex)

    @property
    def terms(self) -> Dict[int, complex]:
        return dict(zip(self.powers.tolist(), self.coefs.tolist()))

    def combine(self, other: "LaurentField", sign: float = 1.0) -> "LaurentField":
        merged = self.terms
        for power, coef in other.terms.items():
            merged[power] = merged.get(power, 0.0) + sign * coef
        return LaurentField(
            constant=self.constant + sign * other.constant,
            log_coef=self.log_coef + sign * other.log_coef,
            terms=merged,
        )

    def holomorphic_derivative(self, z: complex, order: int) -> complex:
        _check_order(order)
        if order == 0:
            return complex(self.constant + self.log_coef * np.log(z) + np.sum(self.coefs * z ** self.powers.astype(float)))
        log_part = self.log_coef * (-1) ** (order - 1) * factorial(order - 1) / z**order
        scale = _falling_factorial(self.powers.astype(float), order)
        return complex(log_part + np.sum(self.coefs * scale * z ** (self.powers - order).astype(float)))

    def evaluate(self, points) -> np.ndarray:
        zeta = _complex(points)
        powers = zeta[:, None] ** self.powers[None, :].astype(float)
        return self.constant + self.log_coef * np.log(np.abs(zeta)) + np.real(powers @ self.coefs)

    def gradient(self, points) -> np.ndarray:
        zeta = _complex(points)
        powers = self.powers.astype(float)
        derivative = self.log_coef / zeta + (zeta[:, None] ** (powers[None, :] - 1.0)) @ (self.coefs * powers)
        return np.column_stack([derivative.real, -derivative.imag])


@dataclass(frozen=True)
class Excitation:
    """
    Dirichlet trace f on the unit circle.

    Kinds: "cos" (cos θ), "exp_cos" (e^{cos θ} cos(sin θ)), "pole"
    (Re s/(s − e^{i(θ−θ₀)}), |s| > 1) and "fourier" (explicit (a_n, b_n)).
    """

    kind: str = "cos"
    coefficients: Mapping[int, Tuple[float, float]] = field(default_factory=dict)
    pole_radius: float = 2.0
    pole_angle: float = 0.0

    def fourier_coefficients(self, tol: float = 1e-17, max_mode: int = 400) -> Dict[int, Tuple[float, float]]:
        """f = a_0 + Σ a_n cos nθ + b_n sin nθ"""
        if self.kind == "cos":
            return {1: (1.0, 0.0)}
        if self.kind == "exp_cos":
            coeffs = {}
            for n in range(max_mode):
                value = 1.0 / factorial(n)
                if value < tol:
                    break
                coeffs[n] = (value, 0.0)
            return coeffs
        if self.kind == "pole":
            if not self.pole_radius > 1.0:
                raise ParameterError(f"pole radius must exceed 1, got {self.pole_radius}")
            coeffs = {}
            for n in range(max_mode):
                scale = self.pole_radius ** (-n)
                if scale < tol:
                    break
                coeffs[n] = (scale * np.cos(n * self.pole_angle), scale * np.sin(n * self.pole_angle))
            return coeffs
        if self.kind == "fourier":
            return {int(n): (float(a), float(b)) for n, (a, b) in self.coefficients.items()}
        raise ParameterError(f"unknown excitation kind: {self.kind}")

    def trace(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.kind == "cos":
            return np.cos(theta)
        if self.kind == "exp_cos":
            return np.exp(np.cos(theta)) * np.cos(np.sin(theta))
        if self.kind == "pole":
            s = self.pole_radius
            return np.real(s / (s - np.exp(1j * (theta - self.pole_angle))))
        total = np.zeros_like(theta)
        for n, (a, b) in self.fourier_coefficients().items():
            total += a * np.cos(n * theta) + (b * np.sin(n * theta) if n else 0.0)
        return total

    def is_zero(self) -> bool:
        return all(a == 0.0 and b == 0.0 for a, b in self.fourier_coefficients().values())

    def harmonic_extension(self, radius: float = 1.0) -> LaurentField:
        """Obstacle-free solution in the disk of the given radius"""
        coeffs = self.fourier_coefficients()
        constant = coeffs.get(0, (0.0, 0.0))[0]
        terms = {n: complex(a, -b) * radius ** (-n) for n, (a, b) in coeffs.items() if n > 0}
        return LaurentField(constant=constant, terms=terms)


@dataclass(frozen=True)
class AnnularSolution:
    """Forward representation kept alongside solver data (ground truth only)"""

    obstacle: BoundaryCurve
    psi: np.ndarray
    v_field: DoubleLayerField
    w_field: GreenSingleLayerField
    condition: float

    @property
    def u_field(self) -> HarmonicField:
        return self.v_field + self.w_field

    def v_on_obstacle(self) -> np.ndarray:
        return self.v_field.evaluate(self.obstacle.nodes)

    def dnu_v_on_obstacle(self) -> np.ndarray:
        return self.v_field.normal_derivative(self.obstacle.nodes, self.obstacle.normals)

    def dnu_u_on_obstacle(self) -> np.ndarray:
        """Exterior normal derivative of u on ∂D"""
        return -self.psi

    def dnu_w_on_obstacle(self) -> np.ndarray:
        """Exterior normal derivative of w on ∂D"""
        return -self.dnu_v_on_obstacle() - self.psi

    def obstacle_flux(self) -> float:
        return float(self.obstacle.weights @ self.dnu_u_on_obstacle())


@dataclass(frozen=True)
class CauchyData:
    """Paired traces on ∂Ω plus the derived w-data"""

    omega: BoundaryCurve
    f: np.ndarray
    dnu_u: np.ndarray
    dnu_v: np.ndarray
    dnu_w: np.ndarray
    generator: Dict[str, Any] = field(default_factory=dict)
    warnings: Tuple[str, ...] = ()
    solution: Optional[AnnularSolution] = field(default=None, repr=False, compare=False)
    noise: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for name in ("f", "dnu_u", "dnu_v", "dnu_w"):
            array = np.array(getattr(self, name), dtype=float)
            if array.shape != (self.omega.n,):
                raise ParameterError(
                    f"{name} must have one value per boundary node",
                    {"expected": self.omega.n, "got": list(array.shape)},
                )
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def theta(self) -> np.ndarray:
        return self.omega.params

    @property
    def is_trivial(self) -> bool:
        return not np.any(self.f)

    def net_flux_v(self) -> float:
        return float(self.omega.weights @ self.dnu_v)

    def net_flux_u(self) -> float:
        return float(self.omega.weights @ self.dnu_u)

    def with_noise(self, level: float, rng: np.random.Generator) -> "CauchyData":
        """Additive Gaussian noise on ∂νw at relative level δ (sup-norm scaled)"""
        if level <= 0:
            return self
        scale = level * float(np.max(np.abs(self.dnu_w)) or 1.0)
        noise = scale * rng.standard_normal(self.omega.n)
        generator = {**self.generator, "noise_level": level, "noise_scale": scale}
        return CauchyData(
            omega=self.omega,
            f=self.f,
            dnu_u=self.dnu_u + noise,
            dnu_v=self.dnu_v,
            dnu_w=self.dnu_w + noise,
            generator=generator,
            warnings=self.warnings,
            solution=self.solution,
            noise=noise if self.noise is None else self.noise + noise,
        )


def solve_interior_dirichlet(omega: BoundaryCurve, f: np.ndarray) -> DoubleLayerField:
    """
    Obstacle-free Dirichlet problem via the double-layer jump equation (−½I + K)φ = f

    Args:
        omega: Outer boundary
        f: Dirichlet data at the omega nodes

    Returns:
        DoubleLayerField representing v
    """
    f = np.asarray(f, dtype=float)
    if f.shape != (omega.n,):
        raise ParameterError("f must have one value per boundary node")
    matrix = assemble_W(omega).matrix
    condition = float(np.linalg.cond(matrix))
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise SolverError("double-layer system is singular", {"condition": condition})
    density = linalg.lu_solve(linalg.lu_factor(matrix), f)
    logger.debug("interior Dirichlet solve: n=%d cond=%.3e", omega.n, condition)
    return DoubleLayerField(omega, density, trace=f)


def solve_annular_dirichlet(omega: BoundaryCurve, obstacle: BoundaryCurve, f: np.ndarray) -> CauchyData:
    """
    Annular Dirichlet problem with u = 0 on ∂D and u = f on ∂Ω

    Args:
        omega: Unit circle
        obstacle: Obstacle boundary strictly inside omega
        f: Dirichlet data at the omega nodes

    Returns:
        CauchyData carrying the forward representation
    """
    require_unit_circle(omega)
    ensure_inside(obstacle, omega, label="obstacle")

    v_field = solve_interior_dirichlet(omega, f)
    v_on_obstacle = v_field.evaluate(obstacle.nodes)

    matrix = assemble_single_layer(obstacle).matrix
    condition = float(np.linalg.cond(matrix))
    warnings: List[str] = []
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        message = f"obstacle single-layer system is ill-conditioned (cond={condition:.3e})"
        logger.warning(message)
        warnings.append(message)
    psi = linalg.lu_solve(linalg.lu_factor(matrix), -v_on_obstacle)

    dnu_w = poisson_kernel(omega.nodes, obstacle.nodes) @ (obstacle.weights * psi)
    dnu_v = v_field.boundary_flux()
    solution = AnnularSolution(
        obstacle=obstacle,
        psi=psi,
        v_field=v_field,
        w_field=GreenSingleLayerField(obstacle, psi),
        condition=condition,
    )
    logger.info("annular solve: omega n=%d obstacle n=%d cond=%.3e", omega.n, obstacle.n, condition)
    return CauchyData(
        omega=omega,
        f=f,
        dnu_u=dnu_v + dnu_w,
        dnu_v=dnu_v,
        dnu_w=dnu_w,
        generator={"source": "solver", "omega_nodes": omega.n, "obstacle_nodes": obstacle.n, "obstacle": obstacle.to_record()},
        warnings=tuple(warnings),
        solution=solution,
    )


class ConcentricAnnulusOracle:
    """
    Separation-of-variables solution for Ω = disk(0, R_Ω), D = disk(0, R_d).

    With f = Re Σ c_n e^{inθ} (c_n = a_n − i b_n):
      mode 0: u = c_0 log(r/R_d)/log(R_Ω/R_d)
      mode n: u = Re c_n (ζ^n − R_d^{2n} ζ̄^{−n}) / (R_Ω^n − R_d^{2n} R_Ω^{−n})
    """

    def __init__(self, r_omega: float, r_d: float, fourier_coeffs: Mapping[int, Tuple[float, float]]):
        if not 0.0 < r_d < r_omega:
            raise ParameterError("oracle requires 0 < R_d < R_omega", {"r_omega": r_omega, "r_d": r_d})
        self.r_omega = float(r_omega)
        self.r_d = float(r_d)
        self.coeffs = {int(n): (float(a), float(b)) for n, (a, b) in fourier_coeffs.items()}

        a0 = self.coeffs.get(0, (0.0, 0.0))[0]
        kappa = a0 / np.log(r_omega / r_d)
        u_terms: Dict[int, complex] = {}
        v_terms: Dict[int, complex] = {}
        for n, (a, b) in self.coeffs.items():
            if n <= 0:
                continue
            c = complex(a, -b)
            denominator = r_omega**n - r_d ** (2 * n) * r_omega ** (-n)
            u_terms[n] = c / denominator
            u_terms[-n] = -(r_d ** (2 * n)) * np.conj(c) / denominator
            v_terms[n] = c * r_omega ** (-n)

        self.u_field = LaurentField(constant=-kappa * np.log(r_d), log_coef=kappa, terms=u_terms)
        self.v_field = LaurentField(constant=a0, terms=v_terms)
        self.w_field = self.u_field.combine(self.v_field, sign=-1.0)

    def cauchy_data(self, n_nodes: int = 256) -> CauchyData:
        omega = make_circle((0.0, 0.0), self.r_omega, n_nodes)
        excitation = Excitation(kind="fourier", coefficients=self.coeffs)
        dnu_u = self.u_field.normal_derivative(omega.nodes, omega.normals)
        dnu_v = self.v_field.normal_derivative(omega.nodes, omega.normals)
        return CauchyData(
            omega=omega,
            f=excitation.trace(omega.params),
            dnu_u=dnu_u,
            dnu_v=dnu_v,
            dnu_w=dnu_u - dnu_v,
            generator={"source": "oracle", "r_omega": self.r_omega, "r_d": self.r_d, "omega_nodes": n_nodes},
        )


def concentric_annulus_oracle(
    r_omega: float,
    r_d: float,
    fourier_coeffs: Mapping[int, Tuple[float, float]],
    n_nodes: int = 256,
) -> CauchyData:
    """Exact Cauchy data for concentric circles"""
    return ConcentricAnnulusOracle(r_omega, r_d, fourier_coeffs).cauchy_data(n_nodes)


def disk_singular_points(
    center,
    r_d: float,
    excitation: Excitation,
    r_omega: float = 1.0,
    min_step: float = 1e-4,
    max_points: int = 1000,
) -> np.ndarray:
    """
    Points where the continuation of w into a disk obstacle stops being harmonic

    Reflection across ∂D (z ↦ c + R_d²/conj(z − c)) followed by reflection
    across ∂Ω (z ↦ R_Ω²/conj(z)) is a Möbius map whose two fixed points are
    the common symmetric points of both circles. The one inside D is where the
    reflected images accumulate; it solves p + R_Ω²/p = (R_Ω² + |c|² − R_d²)/|c|
    on the ray through c and is the origin for concentric circles. A pole
    trace at s·R_Ω e^{iθ₀} adds the image chain q₀ = c + R_d²/conj(P − c),
    q_{k+1} = reflect_D(reflect_Ω(q_k)), which converges to p. Every other
    excitation kind leaves p only.

    Args:
        center: Obstacle center
        r_d: Obstacle radius
        excitation: Dirichlet trace
        r_omega: Outer radius
        min_step: Stop listing poles closer than this to the limit point
        max_points: Hard cap on the chain length

    Returns:
        (m, 2) array, limit point first
    """
    c = complex(float(center[0]), float(center[1]))
    offset = abs(c)
    if offset < 1e-14:
        limit = 0j
    else:
        total = (r_omega**2 + offset**2 - r_d**2) / offset
        if total <= 2.0 * r_omega:
            raise GeometryError("obstacle disk is not strictly inside the outer circle")
        limit = 0.5 * (total - np.sqrt(total**2 - 4.0 * r_omega**2)) * c / offset

    points = [limit]
    if excitation.kind == "pole":
        pole = excitation.pole_radius * r_omega * np.exp(1j * excitation.pole_angle)
        image = c + r_d**2 / np.conj(pole - c)
        while abs(image - limit) >= min_step and len(points) < max_points:
            points.append(image)
            image = c + r_d**2 / np.conj(r_omega**2 / np.conj(image) - c)
    return np.array([[z.real, z.imag] for z in points], dtype=float)


def concentric_singular_points(
    r_d: float,
    excitation: Excitation,
    r_omega: float = 1.0,
    min_radius: float = 1e-4,
) -> np.ndarray:
    """
    Singular points for concentric circles

    The ζ^{-n} part of w is Σ_n −R_d^{2n} conj(c_n) ζ^{-n} / D_n with
    D_n = R_Ω^n − R_d^{2n} R_Ω^{-n}. A pole trace c_n = s^{-n} e^{-inθ₀} sums
    to simple poles at R_d^{2(k+1)}/(s·R_Ω^{2k+1}) e^{iθ₀}, k >= 0, which
    accumulate at the origin.
    """
    return disk_singular_points((0.0, 0.0), r_d, excitation, r_omega=r_omega, min_step=min_radius)


def hull_samples(points: np.ndarray, spacing: float = 0.005) -> np.ndarray:
    """
    Dense samples of the convex hull of a singular set

    Collinear sets give the segment between the two mutually farthest points,
    walked from the lower index to the higher one. Anything else gives the
    hull edges plus a grid of interior points.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if len(points) == 1:
        return points.copy()
    gaps = cdist(points, points)
    i, j = np.unravel_index(int(np.argmax(gaps)), gaps.shape)
    i, j = min(i, j), max(i, j)
    start, end = points[i], points[j]
    length = float(gaps[i, j])
    if length <= spacing:
        return points.copy()

    direction = (end - start) / length
    offsets = points - start
    off_line = np.abs(offsets[:, 0] * direction[1] - offsets[:, 1] * direction[0])
    if float(np.max(off_line)) <= 1e-9:
        count = max(2, int(np.ceil(length / spacing)) + 1)
        return start + np.outer(np.linspace(0.0, 1.0, count), end - start)

    hull = ConvexHull(points)
    vertices = points[hull.vertices]
    samples = [vertices]
    for a, b in zip(vertices, np.roll(vertices, -1, axis=0)):
        count = max(2, int(np.ceil(np.linalg.norm(b - a) / spacing)) + 1)
        samples.append(a + np.outer(np.linspace(0.0, 1.0, count), b - a))
    low, high = vertices.min(axis=0), vertices.max(axis=0)
    xs = np.arange(low[0], high[0] + spacing, spacing)
    ys = np.arange(low[1], high[1] + spacing, spacing)
    grid = np.stack(np.meshgrid(xs, ys), axis=-1).reshape(-1, 2)
    samples.append(grid[Delaunay(vertices).find_simplex(grid) >= 0])
    return np.concatenate(samples)


def cauchy_continuation(data: CauchyData, cutoff: float = 1e-12) -> LaurentField:
    """
    Harmonic continuation of w from its Cauchy data on the unit circle

    With w = 0 on ∂Ω and ∂νw = Σ ĝ_n e^{inθ}, w = Re H where
    H(ζ) = ĝ_0 log ζ + Σ_{n>=1} (ĝ_n ζ^n − conj(ĝ_n) ζ^{−n}) / n.
    Modes below cutoff·max|ĝ| are dropped; the series converges wherever w
    extends harmonically.
    """
    require_unit_circle(data.omega)
    n_modes = data.omega.n // 2
    modes = np.arange(n_modes)
    g_hat = np.fft.rfft(data.dnu_w)[:n_modes] / data.omega.n
    magnitude = np.abs(g_hat)
    keep = magnitude > cutoff * max(float(np.max(magnitude)), np.finfo(float).tiny)

    terms: Dict[int, complex] = {}
    for n in modes[1:]:
        if keep[n]:
            terms[int(n)] = g_hat[n] / n
            terms[-int(n)] = -np.conj(g_hat[n]) / n
    log_coef = float(np.real(g_hat[0])) if keep[0] else 0.0
    return LaurentField(log_coef=log_coef, terms=terms)


def _warn_near_boundary(data: CauchyData, z: np.ndarray) -> None:
    gap = 1.0 - float(np.linalg.norm(z))
    if gap < 2.0 * data.omega.spacing:
        logger.warning("evaluation point %s is within two node spacings of the boundary", z.tolist())


def evaluate_w_extension(data: CauchyData, z, cutoff: float = 1e-12) -> float:
    """
    w at an interior point, reconstructed from the Cauchy data alone

    Args:
        data: Cauchy data on the unit circle
        z: Interior point
        cutoff: Relative spectral cut for the continuation

    Returns:
        w(z) wherever w extends harmonically to z
    """
    z = np.asarray(z, dtype=float)
    if np.linalg.norm(z) >= 1.0:
        raise ParameterError("z must lie strictly inside the unit disk", {"z": z.tolist()})
    _warn_near_boundary(data, z)
    return float(cauchy_continuation(data, cutoff).evaluate(z)[0])


def regular_part_field(data: CauchyData) -> FundamentalSingleLayerField:
    """∮_{∂Ω} ∂νw(y) Φ(y, ·) dσ(y), harmonic in all of Ω"""
    return FundamentalSingleLayerField(data.omega, data.dnu_w)


def evaluate_w_regular_part(data: CauchyData, z) -> float:
    """Regular part of w: the ∂Ω Green representation with the free-space kernel"""
    z = np.asarray(z, dtype=float)
    _warn_near_boundary(data, z)
    return float(regular_part_field(data).evaluate(z)[0])
