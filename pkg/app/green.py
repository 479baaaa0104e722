"""
Kernels for the Laplace equation in the plane.

The outer domain is the unit disk, so the Dirichlet Green function has the
closed form given by the method of images. With Q(x, y) = |x|²|y|² − 2x·y + 1
(which equals |1 − ξȳ|² in complex notation and is smooth at y = 0):

    𝒢(x, y) = −(1/4π)[log|x − y|² − log Q(x, y)]

For derivatives in the second argument the complex form is used:
𝒢(x, z) = Re F(z) with F(z) = −(1/2π)[log(z − ξ) − log(1 − ξ̄z)], ξ = x.
The 3D kernel 1/(4π|x − y|) is not provided.
"""
import logging
from dataclasses import dataclass
from math import factorial

import numpy as np

from app.errors import DomainError, ParameterError, SingularEvaluationError

logger = logging.getLogger(__name__)

MAX_DERIVATIVE_ORDER = 12
_BOUNDARY_TOL = 1e-10
_TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class KernelEval:
    """Kernel value with gradients in both arguments"""

    value: float
    grad_x: np.ndarray
    grad_y: np.ndarray


def _pair(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    diff = x - y
    dist2 = float(diff @ diff)
    if dist2 == 0.0:
        raise SingularEvaluationError("kernel evaluated at coincident points", {"x": x.tolist()})
    return x, y, diff, dist2


def fundamental_solution(x, y) -> KernelEval:
    """
    Fundamental solution Φ(x, y) = −(1/2π) log|x − y|

    Args:
        x: First point
        y: Second point (x ≠ y)

    Returns:
        KernelEval with analytic gradients
    """
    x, y, diff, dist2 = _pair(x, y)
    grad_x = -diff / (_TWO_PI * dist2)
    return KernelEval(
        value=-np.log(dist2) / (2.0 * _TWO_PI),
        grad_x=grad_x,
        grad_y=-grad_x,
    )


def dirichlet_green_disk(x, y) -> KernelEval:
    """
    Dirichlet Green function of the unit disk

    Args:
        x: Point with |x| <= 1
        y: Point with |y| < 1, y ≠ x

    Returns:
        KernelEval; value is 0 whenever |x| = 1
    """
    x, y, diff, dist2 = _pair(x, y)
    rx2, ry2 = float(x @ x), float(y @ y)
    if ry2 >= 1.0:
        raise DomainError("source point must lie inside the unit disk", {"y": y.tolist()})
    if rx2 > 1.0 + _BOUNDARY_TOL:
        raise DomainError("target point must lie in the closed unit disk", {"x": x.tolist()})

    q = rx2 * ry2 - 2.0 * float(x @ y) + 1.0
    value = -(np.log(dist2) - np.log(q)) / (2.0 * _TWO_PI)
    grad_x = -(diff / dist2 - (ry2 * x - y) / q) / _TWO_PI
    grad_y = -(-diff / dist2 - (rx2 * y - x) / q) / _TWO_PI
    return KernelEval(value=float(value), grad_x=grad_x, grad_y=grad_y)


def normal_derivative_green_on_boundary(x, y) -> float:
    """∂𝒢/∂ν_x(x, y) for |x| = 1: the Poisson kernel −(1/2π)(1 − |y|²)/|x − y|²"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if abs(float(x @ x) - 1.0) > _BOUNDARY_TOL:
        raise DomainError("x must lie on the unit circle", {"x": x.tolist()})
    if float(y @ y) >= 1.0:
        raise DomainError("y must lie inside the unit disk", {"y": y.tolist()})
    diff = x - y
    return float(-(1.0 - y @ y) / (_TWO_PI * (diff @ diff)))


def _check_order(order: int) -> None:
    if order < 0 or order > MAX_DERIVATIVE_ORDER:
        raise ParameterError(
            f"derivative order must be in [0, {MAX_DERIVATIVE_ORDER}], got {order}",
            {"order": order},
        )


def green_holomorphic_derivative(sources: np.ndarray, z: complex, order: int) -> np.ndarray:
    """
    ℓ-th complex derivative in z of F_ξ(z) = −(1/2π)[log(z − ξ) − log(1 − ξ̄z)]

    Args:
        sources: Complex source points ξ (array)
        z: Complex evaluation point
        order: Derivative order ℓ (0 returns F itself, principal branch)

    Returns:
        Complex array, one entry per source; Re gives (∂/∂x)^ℓ 𝒢
    """
    _check_order(order)
    xi = np.asarray(sources, dtype=complex)
    direct = z - xi
    image = 1.0 - np.conj(xi) * z
    if order == 0:
        return -(np.log(direct) - np.log(image)) / _TWO_PI
    k = factorial(order - 1)
    return -((-1) ** (order - 1) * k / direct**order + k * (np.conj(xi) / image) ** order) / _TWO_PI


def fundamental_holomorphic_derivative(sources: np.ndarray, z: complex, order: int) -> np.ndarray:
    """ℓ-th complex derivative in z of −(1/2π) log(z − ξ)"""
    _check_order(order)
    direct = z - np.asarray(sources, dtype=complex)
    if order == 0:
        return -np.log(direct) / _TWO_PI
    return -((-1) ** (order - 1) * factorial(order - 1) / direct**order) / _TWO_PI


def directional_derivative_green(h, order: int, x, z) -> float:
    """
    (h·∇_z)^ℓ 𝒢(x, z) from the complex-log form of the disk Green function

    Args:
        h: Unit direction
        order: ℓ, at most MAX_DERIVATIVE_ORDER
        x: First argument of 𝒢
        z: Differentiation point, z ≠ x

    Returns:
        Real directional derivative
    """
    _check_order(order)
    h = np.asarray(h, dtype=float)
    if abs(np.linalg.norm(h) - 1.0) > 1e-12:
        raise ParameterError("direction h must be a unit vector", {"h": h.tolist()})
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if np.array_equal(x, z):
        raise SingularEvaluationError("derivative evaluated at the source point", {"z": z.tolist()})
    if order == 0:
        return dirichlet_green_disk(x, z).value

    eta = complex(h[0], h[1])
    derivative = green_holomorphic_derivative(np.array([complex(x[0], x[1])]), complex(z[0], z[1]), order)[0]
    return float(np.real(eta**order * derivative))


def green_matrix(targets: np.ndarray, sources: np.ndarray) -> np.ndarray:
    """𝒢(x_i, y_j) for target and source point arrays (no coincident pairs)"""
    diff = targets[:, None, :] - sources[None, :, :]
    dist2 = np.einsum("ijk,ijk->ij", diff, diff)
    q = image_quotient(targets, sources)
    return -(np.log(dist2) - np.log(q)) / (2.0 * _TWO_PI)


def image_quotient(targets: np.ndarray, sources: np.ndarray) -> np.ndarray:
    """Q(x_i, y_j) = |x|²|y|² − 2x·y + 1"""
    rx2 = np.einsum("ij,ij->i", targets, targets)
    ry2 = np.einsum("ij,ij->i", sources, sources)
    return rx2[:, None] * ry2[None, :] - 2.0 * targets @ sources.T + 1.0


def green_gradient_x(targets: np.ndarray, sources: np.ndarray) -> np.ndarray:
    """∇_x 𝒢(x_i, y_j) with shape (targets, sources, 2)"""
    diff = targets[:, None, :] - sources[None, :, :]
    dist2 = np.einsum("ijk,ijk->ij", diff, diff)
    ry2 = np.einsum("ij,ij->i", sources, sources)
    q = image_quotient(targets, sources)
    image = ry2[None, :, None] * targets[:, None, :] - sources[None, :, :]
    return -(diff / dist2[..., None] - image / q[..., None]) / _TWO_PI


def poisson_kernel(boundary_points: np.ndarray, sources: np.ndarray) -> np.ndarray:
    """∂ν_x 𝒢(x_i, y_j) for x_i on the unit circle"""
    diff = boundary_points[:, None, :] - sources[None, :, :]
    dist2 = np.einsum("ijk,ijk->ij", diff, diff)
    ry2 = np.einsum("ij,ij->i", sources, sources)
    return -(1.0 - ry2[None, :]) / (_TWO_PI * dist2)


def fundamental_matrix(targets: np.ndarray, sources: np.ndarray) -> np.ndarray:
    """Φ(x_i, y_j)"""
    diff = targets[:, None, :] - sources[None, :, :]
    dist2 = np.einsum("ijk,ijk->ij", diff, diff)
    return -np.log(dist2) / (2.0 * _TWO_PI)


def double_layer_kernel(targets: np.ndarray, sources: np.ndarray, source_normals: np.ndarray) -> np.ndarray:
    """∂ν_y Φ(x_i, y_j) = −(1/2π) ν_y·(y − x)/|x − y|²"""
    diff = sources[None, :, :] - targets[:, None, :]
    dist2 = np.einsum("ijk,ijk->ij", diff, diff)
    along = np.einsum("ijk,jk->ij", diff, source_normals)
    return -along / (_TWO_PI * dist2)
