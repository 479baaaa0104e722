"""
Discretized closed curves for the outer boundary, the obstacle and test domains.

All curves are positively oriented and stored fully discretized: nodes, unit
outward normals and arc-length quadrature weights. Smooth curves (circles and
ellipses) use a uniform parameter grid; convex polygons use an algebraically
graded grid on every edge with the corners left out of the node set.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist, pdist
from scipy.special import ellipe

from app.errors import GeometryError, ParameterError

logger = logging.getLogger(__name__)

ArrayLike = Union[Sequence[float], np.ndarray]


class CurveKind(str, Enum):
    CIRCLE = "circle"
    ELLIPSE = "ellipse"
    CONVEX_POLYGON = "convex_polygon"


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class BoundaryCurve:
    """Discretized closed curve. Immutable once built."""

    kind: CurveKind
    shape: Dict[str, Any]
    nodes: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    params: np.ndarray
    speed: np.ndarray
    curvature: np.ndarray
    grading: float = 1.0
    panels: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("nodes", "normals", "weights", "params", "speed", "curvature"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.panels is not None:
            object.__setattr__(self, "panels", _frozen(self.panels))

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def is_smooth(self) -> bool:
        return self.kind is not CurveKind.CONVEX_POLYGON

    @property
    def perimeter(self) -> float:
        """Quadrature perimeter (sum of weights)"""
        return float(np.sum(self.weights))

    @property
    def vertices(self) -> Optional[np.ndarray]:
        if self.kind is CurveKind.CONVEX_POLYGON:
            return np.asarray(self.shape["vertices"], dtype=float)
        return None

    @property
    def complex_nodes(self) -> np.ndarray:
        return self.nodes[:, 0] + 1j * self.nodes[:, 1]

    @property
    def complex_normals(self) -> np.ndarray:
        return self.normals[:, 0] + 1j * self.normals[:, 1]

    @property
    def spacing(self) -> float:
        """Largest node spacing, used for near-boundary checks"""
        return float(np.max(self.weights))

    def exact_perimeter(self) -> float:
        if self.kind is CurveKind.CIRCLE:
            return 2.0 * np.pi * self.shape["radius"]
        if self.kind is CurveKind.ELLIPSE:
            a, b = sorted(self.shape["semi_axes"], reverse=True)
            return 4.0 * a * float(ellipe(1.0 - (b / a) ** 2))
        vertices = self.vertices
        return float(np.sum(np.linalg.norm(np.roll(vertices, -1, axis=0) - vertices, axis=1)))

    def key_points(self) -> np.ndarray:
        """Nodes plus polygon vertices"""
        if self.vertices is None:
            return self.nodes
        return np.vstack([self.nodes, self.vertices])

    def to_record(self) -> Dict[str, Any]:
        """Structured-text record {kind, parameters, N, grading}"""
        parameters = {
            key: (np.asarray(value).tolist() if isinstance(value, (np.ndarray, list, tuple)) else value)
            for key, value in self.shape.items()
        }
        return {
            "kind": self.kind.value,
            "parameters": parameters,
            "N": self.n,
            "grading": self.grading,
        }


@dataclass(frozen=True)
class TestDomain:
    """Candidate region G sampled by the reconstruction"""

    __test__ = False

    curve: BoundaryCurve
    id: str


def _as_point(p: ArrayLike) -> np.ndarray:
    point = np.asarray(p, dtype=float)
    if point.shape != (2,):
        raise ParameterError(f"expected a 2D point, got shape {point.shape}")
    return point


def _as_points(points: ArrayLike) -> np.ndarray:
    array = np.atleast_2d(np.asarray(points, dtype=float))
    if array.shape[-1] != 2:
        raise ParameterError(f"expected points of shape (M, 2), got {array.shape}")
    return array


def _check_smooth_count(n: int) -> None:
    if n < 8 or n % 2 != 0:
        raise ParameterError(f"node count must be even and >= 8, got {n}")


def make_circle(center: ArrayLike, radius: float, n: int) -> BoundaryCurve:
    """
    Uniformly discretized circle

    Args:
        center: Circle center
        radius: Circle radius (> 0)
        n: Node count (even, >= 8)

    Returns:
        BoundaryCurve with weights 2π·radius/n
    """
    if not radius > 0:
        raise ParameterError(f"radius must be positive, got {radius}")
    _check_smooth_count(n)
    c = _as_point(center)
    t = 2.0 * np.pi * np.arange(n) / n
    direction = np.column_stack([np.cos(t), np.sin(t)])
    return BoundaryCurve(
        kind=CurveKind.CIRCLE,
        shape={"center": c.tolist(), "radius": float(radius)},
        nodes=c + radius * direction,
        normals=direction,
        weights=np.full(n, 2.0 * np.pi * radius / n),
        params=t,
        speed=np.full(n, float(radius)),
        curvature=np.full(n, 1.0 / radius),
    )


def make_ellipse(
    center: ArrayLike,
    semi_axes: Tuple[float, float],
    rotation: float,
    n: int,
) -> BoundaryCurve:
    """
    Uniformly parametrized ellipse x(t) = c + Rot(a cos t, b sin t)

    Args:
        center: Ellipse center
        semi_axes: (a, b), both positive
        rotation: Rotation angle in radians
        n: Node count (even, >= 8)

    Returns:
        BoundaryCurve with trapezoidal arc-length weights
    """
    a, b = (float(v) for v in semi_axes)
    if not (a > 0 and b > 0):
        raise ParameterError(f"semi-axes must be positive, got {semi_axes}")
    _check_smooth_count(n)
    c = _as_point(center)
    t = 2.0 * np.pi * np.arange(n) / n
    cos_r, sin_r = np.cos(rotation), np.sin(rotation)
    rot = np.array([[cos_r, -sin_r], [sin_r, cos_r]])

    local = np.column_stack([a * np.cos(t), b * np.sin(t)])
    speed = np.sqrt((a * np.sin(t)) ** 2 + (b * np.cos(t)) ** 2)
    local_normal = np.column_stack([b * np.cos(t), a * np.sin(t)]) / speed[:, None]

    return BoundaryCurve(
        kind=CurveKind.ELLIPSE,
        shape={"center": c.tolist(), "semi_axes": [a, b], "rotation": float(rotation)},
        nodes=c + local @ rot.T,
        normals=local_normal @ rot.T,
        weights=speed * 2.0 * np.pi / n,
        params=t,
        speed=speed,
        curvature=a * b / speed**3,
    )


def grading_map(u: np.ndarray, exponent: float) -> np.ndarray:
    """Symmetric polynomial grading of [0, 1], clustering toward both ends"""
    u = np.asarray(u, dtype=float)
    left = 0.5 * (2.0 * u) ** exponent
    right = 1.0 - 0.5 * (2.0 * (1.0 - u)) ** exponent
    return np.where(u <= 0.5, left, right)


def _orient_convex(vertices: np.ndarray) -> np.ndarray:
    edges = np.roll(vertices, -1, axis=0) - vertices
    nxt = np.roll(edges, -1, axis=0)
    cross = edges[:, 0] * nxt[:, 1] - edges[:, 1] * nxt[:, 0]
    dot = np.einsum("ij,ij->i", edges, nxt)
    scale = np.max(np.linalg.norm(edges, axis=1)) ** 2

    if np.any(np.abs(cross) <= 1e-12 * scale):
        raise GeometryError("degenerate polygon: collinear consecutive edges")
    if not (np.all(cross > 0) or np.all(cross < 0)):
        raise GeometryError("polygon vertices are not in convex position")
    turning = np.sum(np.arctan2(cross, dot))
    if not np.isclose(abs(turning), 2.0 * np.pi, atol=1e-9):
        raise GeometryError("polygon winds more than once around its interior")
    if cross[0] < 0:
        logger.debug("Reversing clockwise vertex order")
        vertices = vertices[::-1].copy()
    return vertices


def make_convex_polygon(
    vertices: ArrayLike,
    nodes_per_edge: int,
    grading_exponent: float = 3.0,
) -> BoundaryCurve:
    """
    Convex polygon with graded nodes on every edge

    Corners are not nodes; each node owns the straight cell between
    consecutive graded break points, so weights telescope to the exact
    edge lengths.

    Args:
        vertices: Ordered vertex list (either orientation)
        nodes_per_edge: Nodes per edge (>= 4)
        grading_exponent: Grading polynomial degree (>= 1)

    Returns:
        BoundaryCurve with per-node panels
    """
    verts = np.asarray(vertices, dtype=float)
    if verts.ndim != 2 or verts.shape[1] != 2 or len(verts) < 3:
        raise ParameterError("a polygon needs at least 3 vertices")
    if nodes_per_edge < 4:
        raise ParameterError(f"nodes_per_edge must be >= 4, got {nodes_per_edge}")
    if grading_exponent < 1:
        raise ParameterError(f"grading_exponent must be >= 1, got {grading_exponent}")

    verts = _orient_convex(verts)
    n_edges = len(verts)
    m = nodes_per_edge
    breaks = grading_map(np.arange(m + 1) / m, grading_exponent)
    mids = grading_map((np.arange(m) + 0.5) / m, grading_exponent)

    nodes, normals, weights, params, panels = [], [], [], [], []
    for edge, start in enumerate(verts):
        end = verts[(edge + 1) % n_edges]
        vector = end - start
        length = np.linalg.norm(vector)
        tangent = vector / length
        normal = np.array([tangent[1], -tangent[0]])

        nodes.append(start + np.outer(mids, vector))
        normals.append(np.tile(normal, (m, 1)))
        weights.append(length * np.diff(breaks))
        params.append(2.0 * np.pi * (edge + mids) / n_edges)
        panels.append(np.stack([start + np.outer(breaks[:-1], vector), start + np.outer(breaks[1:], vector)], axis=1))

    weights = np.concatenate(weights)
    total = len(weights)
    return BoundaryCurve(
        kind=CurveKind.CONVEX_POLYGON,
        shape={"vertices": verts.tolist()},
        nodes=np.vstack(nodes),
        normals=np.vstack(normals),
        weights=weights,
        params=np.concatenate(params),
        speed=weights * total / (2.0 * np.pi),
        curvature=np.zeros(total),
        grading=float(grading_exponent),
        panels=np.concatenate(panels),
    )


def _curve_of(domain: Union[TestDomain, BoundaryCurve]) -> BoundaryCurve:
    return domain.curve if isinstance(domain, TestDomain) else domain


def contains_points(
    domain: Union[TestDomain, BoundaryCurve],
    points: ArrayLike,
    tol: float = 1e-12,
) -> np.ndarray:
    """Vectorized closed-set membership"""
    curve = _curve_of(domain)
    pts = _as_points(points)

    if curve.kind is CurveKind.CIRCLE:
        center = np.asarray(curve.shape["center"])
        radius = curve.shape["radius"]
        return np.linalg.norm(pts - center, axis=1) <= radius * (1.0 + tol)

    if curve.kind is CurveKind.ELLIPSE:
        center = np.asarray(curve.shape["center"])
        a, b = curve.shape["semi_axes"]
        angle = curve.shape["rotation"]
        shifted = pts - center
        x = shifted[:, 0] * np.cos(angle) + shifted[:, 1] * np.sin(angle)
        y = -shifted[:, 0] * np.sin(angle) + shifted[:, 1] * np.cos(angle)
        return (x / a) ** 2 + (y / b) ** 2 <= 1.0 + tol

    verts = curve.vertices
    edges = np.roll(verts, -1, axis=0) - verts
    rel = pts[:, None, :] - verts[None, :, :]
    side = edges[None, :, 0] * rel[:, :, 1] - edges[None, :, 1] * rel[:, :, 0]
    scale = np.max(np.abs(edges)) ** 2
    return np.all(side >= -tol * scale, axis=1)


def contains(domain: Union[TestDomain, BoundaryCurve], p: ArrayLike) -> bool:
    """True iff p lies in the closed region bounded by the curve"""
    return bool(contains_points(domain, _as_point(p))[0])


def winding_number(curve: BoundaryCurve, p: ArrayLike) -> int:
    """Winding number of the node polygon (vertex polygon for polygons) around p"""
    point = _as_point(p)
    ring = curve.vertices if curve.vertices is not None else curve.nodes
    source = ring
    target = np.roll(ring, -1, axis=0)
    is_left = (target[:, 0] - source[:, 0]) * (point[1] - source[:, 1]) - (point[0] - source[:, 0]) * (
        target[:, 1] - source[:, 1]
    )
    upward = (source[:, 1] <= point[1]) & (target[:, 1] > point[1]) & (is_left > 0)
    downward = (source[:, 1] > point[1]) & (target[:, 1] <= point[1]) & (is_left < 0)
    return int(np.sum(upward) - np.sum(downward))


def boundary_distance(omega: BoundaryCurve, points: ArrayLike) -> np.ndarray:
    """Distance from points to the curve (exact for circles, node-based otherwise)"""
    pts = _as_points(points)
    if omega.kind is CurveKind.CIRCLE:
        center = np.asarray(omega.shape["center"])
        return np.abs(omega.shape["radius"] - np.linalg.norm(pts - center, axis=1))
    return np.min(cdist(pts, omega.key_points()), axis=1)


def ensure_inside(domain: Union[TestDomain, BoundaryCurve], omega: BoundaryCurve, label: str = "curve") -> None:
    """Raise GeometryError unless the curve is strictly inside omega"""
    points = _curve_of(domain).key_points()
    inside = contains_points(omega, points, tol=0.0)
    gap = boundary_distance(omega, points)
    if not np.all(inside) or np.min(gap) <= 0.0:
        raise GeometryError(
            f"{label} is not strictly inside the outer boundary",
            {"min_distance": float(np.min(gap)), "outside_points": int(np.sum(~inside))},
        )


def curves_intersect(first: BoundaryCurve, second: BoundaryCurve) -> bool:
    """True when either curve has points on both sides of the other"""
    inside_a = contains_points(second, first.key_points())
    inside_b = contains_points(first, second.key_points())
    return bool((inside_a.any() and not inside_a.all()) or (inside_b.any() and not inside_b.all()))


def diameter(domain: Union[TestDomain, BoundaryCurve]) -> float:
    points = _curve_of(domain).key_points()
    return float(np.max(pdist(points)))


def check_distance_property(d: Union[TestDomain, BoundaryCurve], omega: BoundaryCurve) -> bool:
    """
    Distance property diam(D) < dist(D, ∂Ω)

    Args:
        d: Domain strictly inside omega
        omega: Outer boundary

    Returns:
        True when the property holds over nodes and vertices
    """
    points = _curve_of(d).key_points()
    dist = float(np.min(boundary_distance(omega, points)))
    diam = diameter(d)
    logger.debug("distance property: diam=%.6g dist=%.6g", diam, dist)
    return diam < dist


def corner_angles(curve: BoundaryCurve) -> np.ndarray:
    """Interior angles of a convex polygon"""
    verts = curve.vertices
    if verts is None:
        raise ParameterError("corner angles are only defined for polygons")
    incoming = verts - np.roll(verts, 1, axis=0)
    outgoing = np.roll(verts, -1, axis=0) - verts
    cross = incoming[:, 0] * outgoing[:, 1] - incoming[:, 1] * outgoing[:, 0]
    dot = np.einsum("ij,ij->i", incoming, outgoing)
    return np.pi - np.arctan2(cross, dot)


def possibly_rational_angles(
    curve: BoundaryCurve,
    max_denominator: int = 20,
    tol: float = 1e-9,
) -> List[Dict[str, Any]]:
    """
    Flag corners whose angle is within tol of 2π·q/p for p <= max_denominator

    Returns:
        One record per flagged corner
    """
    flagged = []
    for index, angle in enumerate(corner_angles(curve)):
        fraction = angle / (2.0 * np.pi)
        for p in range(1, max_denominator + 1):
            q = round(fraction * p)
            if abs(fraction - q / p) < tol:
                flagged.append({"vertex": index, "angle": float(angle), "q": int(q), "p": p})
                break
    return flagged


@dataclass(frozen=True)
class UnitDiskFrame:
    """Affine map of a circular outer boundary onto the unit disk"""

    center: Tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0

    def to_unit(self, points: ArrayLike) -> np.ndarray:
        return (np.asarray(points, dtype=float) - np.asarray(self.center)) / self.radius

    def from_unit(self, points: ArrayLike) -> np.ndarray:
        return np.asarray(self.center) + self.radius * np.asarray(points, dtype=float)

    def length_to_unit(self, length: float) -> float:
        return length / self.radius

    def flux_from_unit(self, flux: np.ndarray) -> np.ndarray:
        """Neumann data scale with 1/radius"""
        return np.asarray(flux) / self.radius
