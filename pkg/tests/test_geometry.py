import numpy as np
import pytest

from app.errors import GeometryError, ParameterError
from app.geometry import (
    CurveKind,
    UnitDiskFrame,
    check_distance_property,
    contains,
    contains_points,
    corner_angles,
    curves_intersect,
    diameter,
    ensure_inside,
    make_circle,
    make_convex_polygon,
    make_ellipse,
    possibly_rational_angles,
    winding_number,
)

EQUILATERAL = [(0.15, 0.0), (-0.075, 0.12990381056766578), (-0.075, -0.12990381056766578)]
SCALENE = [(-0.21, -0.13), (0.24, -0.09), (0.03, 0.26)]


class TestCurveBuilders:
    """Discretization of circles, ellipses and convex polygons"""

    def test_circle_weights_and_normals(self):
        """Circle weights sum to the circumference and normals point outward"""
        curve = make_circle((0.2, -0.1), 0.4, 64)

        assert curve.kind is CurveKind.CIRCLE
        assert curve.n == 64
        assert curve.perimeter == pytest.approx(2.0 * np.pi * 0.4, rel=1e-14)
        np.testing.assert_allclose(np.linalg.norm(curve.normals, axis=1), 1.0, atol=1e-14)
        outward = np.einsum("ij,ij->i", curve.normals, curve.nodes - np.array([0.2, -0.1]))
        assert np.all(outward > 0)

    def test_circle_rejects_odd_or_small_counts(self):
        """Smooth curves need an even node count of at least 8"""
        with pytest.raises(ParameterError):
            make_circle((0.0, 0.0), 0.5, 33)
        with pytest.raises(ParameterError):
            make_circle((0.0, 0.0), 0.5, 6)
        with pytest.raises(ParameterError):
            make_circle((0.0, 0.0), -0.5, 32)

    def test_ellipse_perimeter_converges(self):
        """Trapezoidal weights reproduce the elliptic-integral perimeter"""
        curve = make_ellipse((0.1, 0.0), (0.3, 0.2), 0.4, 128)

        assert curve.perimeter == pytest.approx(curve.exact_perimeter(), rel=1e-10)

    def test_ellipse_normals_are_unit(self):
        """Rotated ellipse normals stay unit and outward"""
        curve = make_ellipse((0.0, 0.0), (0.3, 0.1), 1.1, 64)

        np.testing.assert_allclose(np.linalg.norm(curve.normals, axis=1), 1.0, atol=1e-13)
        assert np.all(np.einsum("ij,ij->i", curve.normals, curve.nodes) > 0)

    def test_polygon_weights_telescope_to_perimeter(self):
        """Graded cells add up to the exact edge lengths"""
        curve = make_convex_polygon(SCALENE, 20, 3.0)

        assert curve.kind is CurveKind.CONVEX_POLYGON
        assert curve.n == 60
        assert curve.perimeter == pytest.approx(curve.exact_perimeter(), rel=1e-13)
        assert curve.grading == 3.0

    def test_polygon_nodes_cluster_at_corners(self):
        """Grading puts the smallest cells next to the vertices"""
        curve = make_convex_polygon(EQUILATERAL, 16, 3.0)
        first_edge = curve.weights[:16]

        assert first_edge[0] < first_edge[8] / 10
        assert first_edge[-1] == pytest.approx(first_edge[0])

    def test_clockwise_polygon_is_reoriented(self):
        """Clockwise input is reversed so normals point outward"""
        curve = make_convex_polygon(SCALENE[::-1], 12)
        centroid = np.mean(SCALENE, axis=0)

        outward = np.einsum("ij,ij->i", curve.normals, curve.nodes - centroid)
        assert np.all(outward > 0)

    def test_polygon_rejects_degenerate_input(self):
        """Collinear and non-convex vertex lists are refused"""
        with pytest.raises(GeometryError):
            make_convex_polygon([(0, 0), (0.1, 0), (0.2, 0), (0.1, 0.2)], 8)
        with pytest.raises(GeometryError):
            make_convex_polygon([(0, 0), (0.4, 0), (0.1, 0.1), (0.4, 0.4), (0, 0.4)], 8)
        with pytest.raises(ParameterError):
            make_convex_polygon([(0, 0), (0.1, 0)], 8)

    def test_curve_arrays_are_immutable(self):
        """Built curves cannot be modified in place"""
        curve = make_circle((0.0, 0.0), 0.5, 16)

        with pytest.raises(ValueError):
            curve.nodes[0, 0] = 1.0

    def test_record_contains_kind_and_size(self):
        """Structured record of a curve"""
        record = make_convex_polygon(EQUILATERAL, 8).to_record()

        assert record["kind"] == "convex_polygon"
        assert record["N"] == 24
        assert len(record["parameters"]["vertices"]) == 3


class TestGeometricQueries:
    """Membership, containment and polygon hypotheses"""

    def test_contains_is_closed(self):
        """Boundary points count as inside"""
        circle = make_circle((0.0, 0.0), 0.5, 32)
        triangle = make_convex_polygon(EQUILATERAL, 8)

        assert contains(circle, (0.5, 0.0))
        assert not contains(circle, (0.51, 0.0))
        assert contains(triangle, EQUILATERAL[1])
        assert contains(triangle, (0.0, 0.0))
        assert not contains(triangle, (0.2, 0.0))

    def test_contains_points_vectorized(self):
        """Ellipse membership over a batch of points"""
        ellipse = make_ellipse((0.0, 0.0), (0.4, 0.2), np.pi / 2, 32)
        points = np.array([[0.0, 0.35], [0.35, 0.0], [0.0, 0.0]])

        np.testing.assert_array_equal(contains_points(ellipse, points), [True, False, True])

    def test_winding_number(self):
        """One turn around interior points, none around exterior ones"""
        circle = make_circle((0.1, 0.1), 0.3, 64)

        assert winding_number(circle, (0.1, 0.2)) == 1
        assert winding_number(circle, (0.9, 0.0)) == 0

    @pytest.mark.parametrize(
        "curve",
        [
            make_circle((0.1, -0.1), 0.4, 256),
            make_ellipse((0.0, 0.1), (0.5, 0.25), 0.3, 256),
            make_convex_polygon(SCALENE, 16),
        ],
        ids=["circle", "ellipse", "polygon"],
    )
    def test_contains_agrees_with_winding_number(self, curve):
        """Membership and winding number agree on 1000 seeded points off the node polygon"""
        rng = np.random.default_rng(11)
        points = rng.uniform(-1.0, 1.0, size=(1000, 2))
        nodes = curve.nodes
        edges = np.roll(nodes, -1, axis=0) - nodes
        nearest = np.min(np.linalg.norm(points[:, None, :] - nodes[None, :, :], axis=2), axis=1)
        clear = nearest > np.max(np.linalg.norm(edges, axis=1))
        points = points[clear]
        assert len(points) >= 900

        inside = contains_points(curve, points)
        winding = np.array([winding_number(curve, p) for p in points])
        np.testing.assert_array_equal(winding, inside.astype(int))
        assert 0 < np.count_nonzero(inside) < len(points)

    def test_ensure_inside(self, unit_circle):
        """Curves touching or crossing the outer boundary are rejected"""
        ensure_inside(make_circle((0.2, 0.0), 0.5, 32), unit_circle)

        with pytest.raises(GeometryError):
            ensure_inside(make_circle((0.6, 0.0), 0.5, 32), unit_circle)

    def test_curves_intersect(self):
        """Crossing circles intersect, nested ones do not"""
        small = make_circle((0.0, 0.0), 0.2, 32)
        big = make_circle((0.0, 0.0), 0.5, 32)
        shifted = make_circle((0.3, 0.0), 0.2, 32)

        assert not curves_intersect(small, big)
        assert curves_intersect(small, shifted)

    def test_distance_property(self, unit_circle):
        """A small central triangle satisfies diam(D) < dist(D, ∂Ω); a large one does not"""
        small = make_convex_polygon(EQUILATERAL, 8)
        large = make_convex_polygon(4.0 * np.asarray(EQUILATERAL), 8)

        assert diameter(small) == pytest.approx(0.15 * np.sqrt(3.0))
        assert check_distance_property(small, unit_circle)
        assert not check_distance_property(large, unit_circle)

    def test_equilateral_angles_are_rational(self):
        """π/3 = 2π·1/6 is flagged at every corner"""
        triangle = make_convex_polygon(EQUILATERAL, 8)

        np.testing.assert_allclose(corner_angles(triangle), np.pi / 3)
        flagged = possibly_rational_angles(triangle)
        assert [corner["p"] for corner in flagged] == [6, 6, 6]

    def test_scalene_angles_are_not_flagged(self):
        """Generic corner angles are not close to low-denominator fractions"""
        triangle = make_convex_polygon(SCALENE, 8)

        assert np.sum(corner_angles(triangle)) == pytest.approx(np.pi)
        assert possibly_rational_angles(triangle) == []

    def test_corner_angles_need_a_polygon(self):
        """Smooth curves have no corners"""
        with pytest.raises(ParameterError):
            corner_angles(make_circle((0.0, 0.0), 0.3, 16))


class TestUnitDiskFrame:
    """Affine map of the user's disk onto the unit disk"""

    def test_round_trip(self):
        """to_unit and from_unit are inverse maps"""
        frame = UnitDiskFrame(center=(1.0, -2.0), radius=3.0)
        points = np.array([[1.0, -2.0], [4.0, -2.0], [2.5, 0.0]])

        unit = frame.to_unit(points)
        np.testing.assert_allclose(unit[1], [1.0, 0.0])
        np.testing.assert_allclose(frame.from_unit(unit), points)

    def test_lengths_and_fluxes_scale(self):
        """Lengths shrink by the radius, Neumann data grow by it"""
        frame = UnitDiskFrame(center=(0.0, 0.0), radius=2.0)

        assert frame.length_to_unit(0.5) == pytest.approx(0.25)
        np.testing.assert_allclose(frame.flux_from_unit(np.array([1.0, -4.0])), [0.5, -2.0])
