"""
Discrete boundary operators with inner-product-aware adjoints.

Every operator carries the Gram matrices of its domain and range so that
adjoints, singular systems and Tikhonov solves are taken in the surrogate
trace-space inner products rather than the Euclidean one.
"""
import logging
import struct
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import linalg

from app.errors import GeometryError, ParameterError, SpaceError
from app.geometry import BoundaryCurve, CurveKind, contains_points, curves_intersect
from app.green import double_layer_kernel, green_matrix, image_quotient, poisson_kernel

logger = logging.getLogger(__name__)

_ALLOWED_ORDERS = (-0.5, 0.0, 0.5)
_DUMP_MAGIC = b"LPROBE01"
_DUMP_HEADER = struct.Struct("<8sII")


class KernelTag(str, Enum):
    SINGLE_LAYER_TRACE = "single_layer_trace"
    R = "R"
    R_STAR = "R_star"
    R_DUAL = "R_dual"
    W_DOUBLE_LAYER = "W_double_layer"


@dataclass(frozen=True)
class InnerProductSpace:
    """Node vectors on a curve with a surrogate H^s inner product"""

    curve: BoundaryCurve
    sobolev_order: float
    gram: np.ndarray

    @property
    def dim(self) -> int:
        return self.gram.shape[0]

    @cached_property
    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor L with gram = L Lᵀ"""
        try:
            return linalg.cholesky(self.gram, lower=True)
        except linalg.LinAlgError as exc:
            raise SpaceError(
                "Gram matrix is not positive definite",
                {"order": self.sobolev_order, "n": self.dim},
            ) from exc

    def inner(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(np.asarray(a) @ self.gram @ np.asarray(b))

    def norm(self, a: np.ndarray) -> float:
        return float(np.linalg.norm(self.cholesky.T @ np.asarray(a)))

    def riesz_map(self) -> np.ndarray:
        """Matrix of x ↦ ⟨x, ·⟩ represented through the quadrature pairing Σ w a b"""
        return self.gram / self.curve.weights[:, None]


def _fourier_gram(curve: BoundaryCurve, s: float) -> np.ndarray:
    n = curve.n
    k = np.fft.fftfreq(n, d=1.0 / n)
    symbol = (1.0 + k**2) ** s
    circulant = np.real(np.fft.ifft(symbol[:, None] * np.fft.fft(np.eye(n), axis=0), axis=0))
    root = np.sqrt(curve.weights)
    gram = root[:, None] * circulant * root[None, :]
    return 0.5 * (gram + gram.T)


def make_space(curve: BoundaryCurve, s: float) -> InnerProductSpace:
    """
    Surrogate trace space on a discretized curve

    Args:
        curve: Curve carrying the node vectors
        s: Sobolev order, one of -1/2, 0, +1/2

    Returns:
        InnerProductSpace with a Fourier-weight Gram on uniform smooth
        curves and diag(weights) on graded polygons
    """
    if s not in _ALLOWED_ORDERS:
        raise ParameterError(f"sobolev order must be one of {_ALLOWED_ORDERS}, got {s}")
    if curve.is_smooth:
        gram = _fourier_gram(curve, s)
    else:
        gram = np.diag(curve.weights)
    return InnerProductSpace(curve=curve, sobolev_order=s, gram=gram)


def euclidean_space(curve: BoundaryCurve) -> InnerProductSpace:
    """Space with the identity Gram"""
    return InnerProductSpace(curve=curve, sobolev_order=0.0, gram=np.eye(curve.n))


@dataclass(frozen=True)
class DiscreteOperator:
    """Dense matrix between two inner-product spaces"""

    matrix: np.ndarray
    domain_space: InnerProductSpace
    range_space: InnerProductSpace
    kernel_tag: KernelTag

    def __post_init__(self):
        rows, cols = self.matrix.shape
        if rows != self.range_space.dim or cols != self.domain_space.dim:
            raise SpaceError(
                "matrix shape does not match its spaces",
                {"shape": [rows, cols], "range": self.range_space.dim, "domain": self.domain_space.dim},
            )
        matrix = np.array(self.matrix, dtype=float)
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(x, dtype=float)


@dataclass(frozen=True)
class SingularSystem:
    """
    Gram-orthonormal singular system A v_n = μ_n u_n.

    Columns of left_vectors are range-orthonormal, columns of right_vectors
    domain-orthonormal.
    """

    mu: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray
    whitened_left: np.ndarray
    range_cholesky: np.ndarray

    @property
    def lam(self) -> np.ndarray:
        return self.mu**2

    @property
    def rank(self) -> int:
        return len(self.mu)

    def coefficients(self, b: np.ndarray) -> np.ndarray:
        """⟨u_n, b⟩ in the range inner product"""
        return self.whitened_left.T @ (self.range_cholesky.T @ np.asarray(b, dtype=float))

    def range_energy(self, b: np.ndarray) -> float:
        """‖b‖² in the range inner product"""
        whitened = self.range_cholesky.T @ np.asarray(b, dtype=float)
        return float(whitened @ whitened)

    def kept(self, truncation: Optional[float]) -> np.ndarray:
        """Mask of modes with λ_n >= truncation·λ_1"""
        if truncation is None or self.rank == 0:
            return np.ones(self.rank, dtype=bool)
        return self.lam >= truncation * self.lam[0]


def _check_disjoint(first: BoundaryCurve, second: BoundaryCurve) -> None:
    if curves_intersect(first, second):
        raise GeometryError("curves intersect", {"first": first.kind.value, "second": second.kind.value})


def _segment_log_integrals(points: np.ndarray, panels: np.ndarray) -> np.ndarray:
    """∫ log|x_i − y| dσ(y) over each straight panel j"""
    start = panels[:, 0, :]
    vector = panels[:, 1, :] - start
    length = np.linalg.norm(vector, axis=1)
    direction = vector / length[:, None]

    rel = points[:, None, :] - start[None, :, :]
    along = np.einsum("ijk,jk->ij", rel, direction)
    height = np.abs(rel[:, :, 0] * direction[None, :, 1] - rel[:, :, 1] * direction[None, :, 0])

    def primitive(t):
        t2 = t * t + height * height
        with np.errstate(divide="ignore", invalid="ignore"):
            log_part = np.where(t2 > 0.0, 0.5 * t * np.log(np.where(t2 > 0.0, t2, 1.0)), 0.0)
        return log_part - t + height * np.arctan2(t, height)

    return primitive(length[None, :] - along) - primitive(-along)


def _kress_log_weights(n: int) -> np.ndarray:
    """Weights R_j(t_i) for ∫ log(4 sin²((t − τ)/2)) g(τ) dτ on n = 2m equispaced nodes"""
    m = n // 2
    t = 2.0 * np.pi * np.arange(n) / n
    delta = t[:, None] - t[None, :]
    weights = -np.cos(m * delta) * np.pi / m**2
    for k in range(1, m):
        weights -= (2.0 * np.pi / m) * np.cos(k * delta) / k
    return weights


def _smooth_self_single_layer(curve: BoundaryCurve) -> np.ndarray:
    n = curve.n
    t = curve.params
    nodes = curve.nodes
    step = 2.0 * np.pi / n

    diff = nodes[:, None, :] - nodes[None, :, :]
    dist2 = np.einsum("ijk,ijk->ij", diff, diff)
    sin2 = 4.0 * np.sin(0.5 * (t[:, None] - t[None, :])) ** 2
    off = ~np.eye(n, dtype=bool)
    remainder = np.empty((n, n))
    remainder[off] = np.log(dist2[off] / sin2[off])
    remainder[~off] = np.log(curve.speed**2)

    image = np.log(image_quotient(nodes, nodes))
    kernel = -_kress_log_weights(n) / (4.0 * np.pi) + step * (image - remainder) / (4.0 * np.pi)
    return kernel * curve.speed[None, :]


def _polygon_self_single_layer(curve: BoundaryCurve) -> np.ndarray:
    direct = -_segment_log_integrals(curve.nodes, curve.panels) / (2.0 * np.pi)
    image = np.log(image_quotient(curve.nodes, curve.nodes)) / (4.0 * np.pi)
    return direct + image * curve.weights[None, :]


def assemble_single_layer(
    g_curve: BoundaryCurve,
    target: Optional[BoundaryCurve] = None,
) -> DiscreteOperator:
    """
    Single layer S[φ](x) = ∫ 𝒢(x, y) φ(y) dσ(y) with the disk Green function

    Args:
        g_curve: Source curve ∂G
        target: Disjoint target curve, or None for the trace on ∂G itself

    Returns:
        DiscreteOperator from (∂G, −1/2) to (target, +1/2)
    """
    if target is None or target is g_curve:
        if g_curve.is_smooth:
            matrix = _smooth_self_single_layer(g_curve)
        else:
            matrix = _polygon_self_single_layer(g_curve)
        target = g_curve
    else:
        _check_disjoint(g_curve, target)
        matrix = green_matrix(target.nodes, g_curve.nodes) * g_curve.weights[None, :]
    return DiscreteOperator(
        matrix=matrix,
        domain_space=make_space(g_curve, -0.5),
        range_space=make_space(target, 0.5),
        kernel_tag=KernelTag.SINGLE_LAYER_TRACE,
    )


def single_layer_field_matrix(g_curve: BoundaryCurve, points: np.ndarray) -> np.ndarray:
    """Evaluation matrix of S at arbitrary points off ∂G"""
    return green_matrix(np.atleast_2d(points), g_curve.nodes) * g_curve.weights[None, :]


def require_unit_circle(omega: BoundaryCurve) -> None:
    radii = np.linalg.norm(omega.nodes, axis=1)
    if omega.kind is not CurveKind.CIRCLE or not np.allclose(radii, 1.0, atol=1e-12):
        raise GeometryError("outer boundary must be the unit circle in the working frame")


def assemble_R(g_curve: BoundaryCurve, omega: BoundaryCurve) -> DiscreteOperator:
    """
    R[φ](x) = ∫_{∂G} ∂ν_x 𝒢(x, y) φ(y) dσ(y) for x on ∂Ω

    Args:
        g_curve: Test-domain boundary strictly inside Ω
        omega: Unit circle

    Returns:
        DiscreteOperator from (∂G, −1/2) to (∂Ω, −1/2)
    """
    require_unit_circle(omega)
    matrix = poisson_kernel(omega.nodes, g_curve.nodes) * g_curve.weights[None, :]
    return DiscreteOperator(
        matrix=matrix,
        domain_space=make_space(g_curve, -0.5),
        range_space=make_space(omega, -0.5),
        kernel_tag=KernelTag.R,
    )


def assemble_adjoint(op: DiscreteOperator) -> DiscreteOperator:
    """Hilbert adjoint: Gram_domain⁻¹ · matrixᵀ · Gram_range"""
    factor = (op.domain_space.cholesky, True)
    matrix = linalg.cho_solve(factor, op.matrix.T @ op.range_space.gram)
    tag = {KernelTag.R: KernelTag.R_STAR, KernelTag.R_STAR: KernelTag.R}.get(op.kernel_tag, op.kernel_tag)
    return DiscreteOperator(
        matrix=matrix,
        domain_space=op.range_space,
        range_space=op.domain_space,
        kernel_tag=tag,
    )


def assemble_R_dual(omega: BoundaryCurve, g_curve: BoundaryCurve) -> DiscreteOperator:
    """
    Dual operator (R^(*)η)(y) = ∫_{∂Ω} ∂ν_x 𝒢(x, y) η(x) dσ(x)

    Returns:
        DiscreteOperator from (∂Ω, +1/2) to (∂G, +1/2)
    """
    require_unit_circle(omega)
    matrix = poisson_kernel(omega.nodes, g_curve.nodes).T * omega.weights[None, :]
    return DiscreteOperator(
        matrix=matrix,
        domain_space=make_space(omega, 0.5),
        range_space=make_space(g_curve, 0.5),
        kernel_tag=KernelTag.R_DUAL,
    )


def double_layer_field_matrix(omega: BoundaryCurve, points: np.ndarray) -> np.ndarray:
    """Evaluation matrix of W at points off ∂Ω"""
    return double_layer_kernel(np.atleast_2d(points), omega.nodes, omega.normals) * omega.weights[None, :]


def _double_layer_kernel_safe(omega: BoundaryCurve) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return double_layer_kernel(omega.nodes, omega.nodes, omega.normals)


def assemble_W(omega: BoundaryCurve, target: Optional[BoundaryCurve] = None) -> DiscreteOperator:
    """
    Double layer W[φ](x) = ∫_{∂Ω} ∂ν_y Φ(x, y) φ(y) dσ(y)

    Args:
        omega: Source curve
        target: Interior target curve, or None for the jump trace on omega

    Returns:
        DiscreteOperator from (∂Ω, +1/2) to (target, +1/2)
    """
    if target is None or target is omega:
        kernel = _double_layer_kernel_safe(omega)
        np.fill_diagonal(kernel, -omega.curvature / (4.0 * np.pi))
        matrix = kernel * omega.weights[None, :] - 0.5 * np.eye(omega.n)
        target = omega
    else:
        if not np.all(contains_points(omega, target.key_points())):
            raise GeometryError("double-layer target must lie inside the source curve")
        matrix = double_layer_field_matrix(omega, target.nodes)
    return DiscreteOperator(
        matrix=matrix,
        domain_space=make_space(omega, 0.5),
        range_space=make_space(target, 0.5),
        kernel_tag=KernelTag.W_DOUBLE_LAYER,
    )


def singular_system(op: DiscreteOperator) -> SingularSystem:
    """
    Gram-aware SVD

    Whitens both spaces with their Cholesky factors, takes the Euclidean
    SVD of L_rᵀ A L_d^{-ᵀ} and maps the vectors back.

    Args:
        op: Operator to decompose

    Returns:
        SingularSystem with non-increasing μ
    """
    l_domain = op.domain_space.cholesky
    l_range = op.range_space.cholesky
    whitened = l_range.T @ linalg.solve_triangular(l_domain, op.matrix.T, lower=True).T
    u, mu, vt = linalg.svd(whitened, full_matrices=False)
    right = linalg.solve_triangular(l_domain.T, vt.T, lower=False)
    left = linalg.solve_triangular(l_range.T, u, lower=False)
    logger.debug("singular system: rank=%d mu1=%.3e mu_min=%.3e", len(mu), mu[0] if len(mu) else 0.0, mu[-1] if len(mu) else 0.0)
    return SingularSystem(
        mu=mu,
        left_vectors=left,
        right_vectors=right,
        whitened_left=u,
        range_cholesky=l_range,
    )


def tikhonov_filter(system: SingularSystem, alpha: float, truncation: Optional[float] = None) -> np.ndarray:
    """Filter factors μ/(α + μ²), zero on truncated modes"""
    if not alpha > 0:
        raise ParameterError(f"alpha must be positive, got {alpha}", {"alpha": alpha})
    factors = system.mu / (alpha + system.lam)
    return np.where(system.kept(truncation), factors, 0.0)


def tikhonov_solve(
    op: DiscreteOperator,
    b: np.ndarray,
    alpha: float,
    truncation: Optional[float] = None,
    system: Optional[SingularSystem] = None,
) -> np.ndarray:
    """
    Regularized solution φ_α = (αI + A*A)⁻¹ A* b through the singular system

    Args:
        op: Operator A
        b: Range vector
        alpha: Regularization parameter (> 0)
        truncation: Optional relative λ cut
        system: Precomputed singular system of op

    Returns:
        Domain vector φ_α
    """
    system = system or singular_system(op)
    factors = tikhonov_filter(system, alpha, truncation)
    return system.right_vectors @ (factors * system.coefficients(b))


def normal_equation_residual(op: DiscreteOperator, phi: np.ndarray, b: np.ndarray, alpha: float) -> float:
    """‖(αI + A*A)φ − A*b‖ / ‖A*b‖ in the domain norm"""
    star = assemble_adjoint(op).matrix
    rhs = star @ b
    lhs = alpha * phi + star @ (op.matrix @ phi)
    scale = op.domain_space.norm(rhs)
    return op.domain_space.norm(lhs - rhs) / scale if scale > 0 else op.domain_space.norm(lhs)


def save_matrix(path: Union[str, Path], matrix: np.ndarray) -> None:
    """Little-endian float64 dump with a 16-byte header (magic, rows, cols)"""
    array = np.atleast_2d(np.asarray(matrix, dtype="<f8"))
    if array.shape[0] == 1 and np.ndim(matrix) == 1:
        array = array.T
    rows, cols = array.shape
    with open(path, "wb") as handle:
        handle.write(_DUMP_HEADER.pack(_DUMP_MAGIC, rows, cols))
        handle.write(np.ascontiguousarray(array).tobytes())


def load_matrix(path: Union[str, Path]) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, rows, cols = _DUMP_HEADER.unpack_from(raw)
    if magic != _DUMP_MAGIC:
        raise ParameterError(f"not a matrix dump: {path}")
    return np.frombuffer(raw, dtype="<f8", offset=_DUMP_HEADER.size).reshape(rows, cols).copy()
