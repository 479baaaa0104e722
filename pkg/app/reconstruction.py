"""
Test-domain sweeps and reconstruction of D̄ as the intersection of the
positive test domains on a pixel grid.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import AbstractSet, Any, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist, directed_hausdorff

from app.errors import MetricError, ParameterError, PlanError, ProbeError
from app.forward import CauchyData
from app.geometry import (
    BoundaryCurve,
    TestDomain,
    contains_points,
    ensure_inside,
    make_circle,
    make_convex_polygon,
)
from app.indicators import (
    DEFAULT_SLOPE_THRESHOLD,
    DEFAULT_TRUNCATION,
    DEFAULT_WINDOW,
    NRT_LADDER,
    IndicatorResult,
    RegularizationSchedule,
    classify_differences,
    classify_ladder,
    classify_path,
    discrepancy_level,
    duality_gap,
    nrt_pre_indicator,
    rt_path,
)
from app.operators import assemble_R, singular_system

logger = logging.getLogger(__name__)


class Method(str, Enum):
    RT = "rt"
    NRT = "nrt"
    BOTH = "both"

    @property
    def uses_rt(self) -> bool:
        return self is not Method.NRT

    @property
    def uses_nrt(self) -> bool:
        return self is not Method.RT


class SweepFamily(str, Enum):
    DISKS = "disks"
    POLYGONS = "polygons"


@dataclass(frozen=True)
class IndicatorOptions:
    """Per-domain indicator settings shared by every domain of a sweep"""

    schedule: RegularizationSchedule = field(default_factory=RegularizationSchedule)
    slope_threshold: float = DEFAULT_SLOPE_THRESHOLD
    window: int = DEFAULT_WINDOW
    truncation: float = DEFAULT_TRUNCATION
    ladder: Tuple[float, ...] = NRT_LADDER
    morozov_factor: Optional[float] = None
    variant: bool = False


def _grid_offsets(spacing: float, extent: float) -> np.ndarray:
    if not spacing > 0:
        raise PlanError(f"grid spacing must be positive, got {spacing}")
    count = int(round(extent / spacing))
    return spacing * np.arange(-count, count + 1)


@dataclass(frozen=True)
class SweepPlan:
    """
    Family of test domains.

    Disks: centers on a square grid of the given spacing inside
    origin ± extent, one disk per radius. Polygons: the template scaled
    about its centroid and translated over the same grid.
    """

    family: SweepFamily = SweepFamily.DISKS
    center_spacing: float = 0.1
    center_extent: float = 0.0
    center_origin: Tuple[float, float] = (0.0, 0.0)
    radii: Tuple[float, ...] = ()
    nodes: int = 64
    template: Optional[Tuple[Tuple[float, float], ...]] = None
    scales: Tuple[float, ...] = (1.0,)
    nodes_per_edge: int = 16
    grading: float = 3.0
    clearance: float = 0.02
    margin_exclusion: float = 0.0

    def centers(self) -> List[Tuple[float, float]]:
        offsets = _grid_offsets(self.center_spacing, self.center_extent)
        ox, oy = self.center_origin
        return [(float(ox + dx), float(oy + dy)) for dx in offsets for dy in offsets]

    def generate(self, omega: BoundaryCurve) -> List[TestDomain]:
        """
        Test domains strictly inside omega with the configured clearance

        Args:
            omega: Unit circle

        Returns:
            Domains with ids in generation order
        """
        if self.family is SweepFamily.DISKS:
            curves = self._disks()
        else:
            curves = self._polygons()
        limit = 1.0 - self.clearance
        domains = []
        for curve in curves:
            radius = float(np.max(np.linalg.norm(curve.key_points(), axis=1)))
            if radius > limit:
                continue
            domains.append(TestDomain(curve=curve, id=f"{self.family.value}-{len(domains):04d}"))
        for domain in domains:
            ensure_inside(domain, omega, label=f"test domain {domain.id}")
        logger.info("sweep plan: %d %s inside the outer boundary", len(domains), self.family.value)
        return domains

    def _disks(self) -> List[BoundaryCurve]:
        curves = []
        for center in self.centers():
            for radius in self.radii:
                curves.append(make_circle(center, float(radius), self.nodes))
        return curves

    def _polygons(self) -> List[BoundaryCurve]:
        if self.template is None:
            raise PlanError("polygon sweep requires a template polygon")
        template = np.asarray(self.template, dtype=float)
        centroid = template.mean(axis=0)
        curves = []
        for center in self.centers():
            for scale in self.scales:
                vertices = np.asarray(center) + scale * (template - centroid)
                curves.append(make_convex_polygon(vertices, self.nodes_per_edge, self.grading))
        return curves

    def margin_band(self, domains: Sequence[TestDomain], reference) -> FrozenSet[str]:
        """Ids of the domains that come within margin_exclusion of just containing the reference"""
        if self.margin_exclusion <= 0 or reference is None:
            return frozenset()
        return frozenset(d.id for d in domains if in_margin_band(d, reference, self.margin_exclusion))


@dataclass(frozen=True)
class SweepRecord:
    """Outcome for one test domain; failures keep the domain and an error record"""

    domain: TestDomain
    rt: Optional[IndicatorResult] = None
    nrt: Optional[IndicatorResult] = None
    rt_variant: Optional[IndicatorResult] = None
    duality_gap: Optional[float] = None
    error: Optional[Dict[str, Any]] = None

    @property
    def positive(self) -> bool:
        """Finite indicator; RT decides when both tests ran"""
        if self.error is not None:
            return False
        decisive = self.rt or self.nrt
        return bool(decisive and decisive.is_finite)

    @property
    def agree(self) -> Optional[bool]:
        if self.rt is None or self.nrt is None:
            return None
        return self.rt.classification is self.nrt.classification


def evaluate_domain(data: CauchyData, domain: TestDomain, method: Method, options: IndicatorOptions) -> SweepRecord:
    """
    All requested indicators of one domain from a single singular system

    Args:
        data: Cauchy data on the unit circle
        domain: Test domain
        method: rt, nrt or both
        options: Indicator settings

    Returns:
        SweepRecord; failures are recorded on it instead of raised
    """
    try:
        ensure_inside(domain, data.omega, label=f"test domain {domain.id}")
        op = assemble_R(domain.curve, data.omega)
        system = singular_system(op)
        rt = nrt = variant = gap = None

        if method.uses_rt:
            discrepancy = discrepancy_level(data, op, options.morozov_factor)
            path = rt_path(op, data.dnu_w, options.schedule, system=system, discrepancy=discrepancy)
            rt = classify_path(path, options.slope_threshold, min(options.window, len(path)))
            if options.variant:
                variant = classify_differences(path, options.slope_threshold, options.window)

        if method.uses_nrt:
            ladder = [(tau, nrt_pre_indicator(op, data.dnu_w, tau, system)) for tau in options.ladder]
            nrt = classify_ladder(ladder, options.slope_threshold)

        if method is Method.BOTH:
            gap = duality_gap(op, data.dnu_w, options.schedule, options.truncation, system)

        return SweepRecord(domain=domain, rt=rt, nrt=nrt, rt_variant=variant, duality_gap=gap)
    except ProbeError as exc:
        logger.warning("domain %s failed: %s", domain.id, exc.message)
        return SweepRecord(domain=domain, error=exc.to_dict())
    except np.linalg.LinAlgError as exc:
        logger.warning("domain %s failed: %s", domain.id, exc)
        return SweepRecord(domain=domain, error={"error": "linalg_error", "message": str(exc), "details": {}})
    except Exception as exc:
        logger.warning("domain %s failed: %s", domain.id, exc, exc_info=True)
        return SweepRecord(
            domain=domain,
            error={"error": "numerical_error", "message": str(exc), "details": {"type": type(exc).__name__}},
        )


def sweep(
    data: CauchyData,
    domains: Sequence[TestDomain],
    method: Method = Method.BOTH,
    options: Optional[IndicatorOptions] = None,
    threads: int = 1,
) -> List[SweepRecord]:
    """
    Evaluate every test domain, in parallel when threads > 1

    Args:
        data: Cauchy data
        domains: Domains from SweepPlan.generate
        method: Indicators to compute
        options: Indicator settings
        threads: Worker cap

    Returns:
        One record per domain ordered by domain id
    """
    options = options or IndicatorOptions()
    method = Method(method)
    if not domains:
        return []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(lambda g: evaluate_domain(data, g, method, options), domains))
    else:
        records = [evaluate_domain(data, g, method, options) for g in domains]

    failed = sum(record.error is not None for record in records)
    logger.info("sweep done: %d domains, %d positive, %d failed", len(records), sum(r.positive for r in records), failed)
    return sorted(records, key=lambda record: record.domain.id)


@dataclass(frozen=True)
class ReconstructionMask:
    """Occupancy over the pixel grid covering the bounding box of Ω"""

    origin: Tuple[float, float]
    spacing: float
    occupancy: np.ndarray
    positive_count: int
    warning: Optional[str] = None
    excluded_count: int = 0

    @property
    def shape(self) -> Tuple[int, int]:
        return self.occupancy.shape

    def pixel_centers(self) -> np.ndarray:
        return pixel_centers(self.origin, self.spacing, self.shape)

    def occupied_points(self) -> np.ndarray:
        return self.pixel_centers()[self.occupancy.ravel()]

    @property
    def area(self) -> float:
        return float(np.count_nonzero(self.occupancy)) * self.spacing**2

    def sidecar(self) -> Dict[str, Any]:
        rows, cols = self.shape
        return {
            "origin": list(self.origin),
            "spacing": self.spacing,
            "rows": rows,
            "cols": cols,
            "positive_count": self.positive_count,
            "excluded_count": self.excluded_count,
            "warning": self.warning,
        }


def pixel_centers(origin: Tuple[float, float], spacing: float, shape: Tuple[int, int]) -> np.ndarray:
    """Row-major pixel centers, row 0 at the lowest y"""
    rows, cols = shape
    xs = origin[0] + (np.arange(cols) + 0.5) * spacing
    ys = origin[1] + (np.arange(rows) + 0.5) * spacing
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def _grid_for(omega: BoundaryCurve, resolution: float) -> Tuple[Tuple[float, float], Tuple[int, int]]:
    if not resolution > 0:
        raise ParameterError(f"grid resolution must be positive, got {resolution}")
    lower = omega.nodes.min(axis=0)
    upper = omega.nodes.max(axis=0)
    if omega.shape.get("radius") is not None:
        center = np.asarray(omega.shape["center"])
        lower = center - omega.shape["radius"]
        upper = center + omega.shape["radius"]
    cols, rows = (int(np.ceil((upper - lower)[i] / resolution - 1e-9)) for i in range(2))
    return (float(lower[0]), float(lower[1])), (rows, cols)


def intersect_positive(
    records: Sequence[SweepRecord],
    omega: BoundaryCurve,
    resolution: float,
    exclude: AbstractSet[str] = frozenset(),
) -> ReconstructionMask:
    """
    Pixel-wise intersection of the closures of all positive test domains

    Args:
        records: Sweep records (nonempty)
        omega: Outer boundary
        resolution: Pixel size
        exclude: Domain ids in the margin band, left out of the intersection

    Returns:
        ReconstructionMask; with no positive domain the mask is Ω itself and
        a warning is attached
    """
    if not records:
        raise ParameterError("intersect_positive needs at least one sweep record")
    origin, shape = _grid_for(omega, resolution)
    points = pixel_centers(origin, resolution, shape)
    occupancy = contains_points(omega, points)

    excluded = sum(record.domain.id in exclude for record in records)
    if excluded:
        logger.info("%d margin-band domains left out of the intersection", excluded)
    positive = [record for record in records if record.positive and record.domain.id not in exclude]
    warning = None
    if not positive:
        warning = "no positive test domain; mask covers the whole outer domain"
        logger.warning(warning)
    for record in positive:
        occupancy &= contains_points(record.domain, points)

    return ReconstructionMask(
        origin=origin,
        spacing=float(resolution),
        occupancy=occupancy.reshape(shape),
        positive_count=len(positive),
        warning=warning,
        excluded_count=excluded,
    )


def rasterize(domain, mask: ReconstructionMask) -> np.ndarray:
    """Closed-set membership of the pixel centers of mask's grid"""
    return contains_points(domain, mask.pixel_centers()).reshape(mask.shape)


def hausdorff_distance(mask: ReconstructionMask, true_d) -> float:
    """
    Symmetric Hausdorff distance between occupied pixels and the rasterized D̄

    Args:
        mask: Reconstruction (nonempty)
        true_d: Ground-truth domain or curve

    Returns:
        Distance in working-frame units
    """
    occupied = mask.occupied_points()
    if len(occupied) == 0:
        raise MetricError("reconstruction mask is empty")
    truth = mask.pixel_centers()[rasterize(true_d, mask).ravel()]
    if len(truth) == 0:
        curve = true_d.curve if isinstance(true_d, TestDomain) else true_d
        truth = curve.key_points()
        logger.debug("true domain is below pixel size; using its boundary nodes")
    forward = directed_hausdorff(occupied, truth)[0]
    backward = directed_hausdorff(truth, occupied)[0]
    return float(max(forward, backward))


def hausdorff_to_points(mask: ReconstructionMask, points) -> float:
    """Symmetric Hausdorff distance between occupied pixels and a sampled point set"""
    occupied = mask.occupied_points()
    if len(occupied) == 0:
        raise MetricError("reconstruction mask is empty")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return float(max(directed_hausdorff(occupied, points)[0], directed_hausdorff(points, occupied)[0]))


def containment_margin(domain: TestDomain, reference) -> float:
    """
    Largest signed distance from the reference to ∂G

    Negative when Ḡ holds the whole reference (its magnitude is the clearance),
    positive when some reference point lies outside (the overshoot).
    """
    if isinstance(reference, BoundaryCurve):
        reference = reference.key_points()
    points = np.atleast_2d(np.asarray(reference, dtype=float))
    gaps = np.min(cdist(points, domain.curve.key_points()), axis=1)
    inside = contains_points(domain, points)
    return float(np.max(np.where(inside, -gaps, gaps)))


def in_margin_band(domain: TestDomain, reference, width: float) -> bool:
    """True when G just fails or just manages to contain the reference curve or point set"""
    if width <= 0:
        return False
    return abs(containment_margin(domain, reference)) < width


def polygon_mode_sweep(
    data: CauchyData,
    plan: SweepPlan,
    d0: Optional[BoundaryCurve],
    method: Method = Method.RT,
    options: Optional[IndicatorOptions] = None,
    resolution: float = 0.01,
    threads: int = 1,
    reference=None,
) -> Tuple[List[SweepRecord], ReconstructionMask]:
    """
    Sweep of translated and scaled copies of a convex template polygon

    Args:
        data: Cauchy data
        plan: Plan with family=polygons
        d0: A priori convex polygon containing every test domain, required
            whenever the NRT is used
        method: Indicators to compute
        options: Indicator settings
        resolution: Mask pixel size
        threads: Worker cap
        reference: Curve or points for the margin band, if any

    Returns:
        Sweep records and the reconstruction mask
    """
    method = Method(method)
    if plan.family is not SweepFamily.POLYGONS:
        raise PlanError("polygon mode needs a polygon sweep plan")
    domains = plan.generate(data.omega)
    if method.uses_nrt:
        if d0 is None:
            raise PlanError("the no-response test needs an a priori polygon D0")
        for domain in domains:
            if not np.all(contains_points(d0, domain.curve.vertices, tol=1e-12)):
                raise PlanError(f"test domain {domain.id} is not contained in D0", {"domain": domain.id})
    records = sweep(data, domains, method, options, threads)
    if not records:
        raise PlanError("polygon plan produced no test domain inside the outer boundary")
    exclude = plan.margin_band(domains, reference)
    return records, intersect_positive(records, data.omega, resolution, exclude)
