import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from app.errors import ScenarioValidationError
from app.geometry import TestDomain, UnitDiskFrame, make_circle
from app.indicators import Classification, IndicatorResult
from app.models import IndicatorRecordRow
from app.operators import load_matrix
from app.reconstruction import ReconstructionMask, SweepRecord
from app.schemas import ScenarioConfig
from app.services import OutputService, ResultStore, ScenarioService

PRESETS = Path(__file__).resolve().parent.parent / "presets"

SMALL_CONCENTRIC = """
name = "small"
method = "both"
outputs = ["indicators_csv", "mask_pgm", "duality_report_json", "cauchy_csv",
           "curve_nodes_csv", "operator_dump", "indicators_db"]

[omega]
kind = "circle"
radius = 1.0
nodes = 256

[obstacle]
kind = "circle"
radius = 0.5
nodes = 128

[excitation]
kind = "pole"
pole_radius = 1.25

[data_source]
kind = "oracle"

[sweep]
radii = [0.1, 0.5]
margin_exclusion = 0.05

[indicators]
grid_resolution = 0.05

[diagnostics]
green_identity_trials = 2
"""


def _config(**overrides):
    raw = {"obstacle": {"kind": "circle", "radius": 0.3, "nodes": 96}, "sweep": {"radii": [0.2]}}
    raw.update(overrides)
    return ScenarioConfig(**raw)


def _record(domain_id, radius, finite=True, error=None):
    domain = TestDomain(curve=make_circle((0.0, 0.0), radius, 16), id=domain_id)
    if error is not None:
        return SweepRecord(domain=domain, error=error)
    if finite:
        rt = IndicatorResult(2.5, Classification.FINITE, 0.01)
        nrt = IndicatorResult(2.5, Classification.FINITE, 0.0, kind="nrt")
        return SweepRecord(domain=domain, rt=rt, nrt=nrt, duality_gap=1e-9)
    rt = IndicatorResult(math.inf, Classification.INFINITE, 0.3)
    nrt = IndicatorResult(math.inf, Classification.INFINITE, 0.2, kind="nrt")
    return SweepRecord(domain=domain, rt=rt, nrt=nrt, duality_gap=0.5)


class TestScenarioValidation:
    """Schema loading and geometric checks"""

    def test_load_valid_file(self, scenario_file):
        """A well-formed scenario parses into a config"""
        config = ScenarioService.load_config(scenario_file(SMALL_CONCENTRIC))

        assert config.name == "small"
        assert config.data_source.kind == "oracle"
        assert config.sweep.radii == [0.1, 0.5]

    def test_load_broken_toml(self, scenario_file):
        """Unparseable files are validation errors on <file>"""
        with pytest.raises(ScenarioValidationError) as exc_info:
            ScenarioService.load_config(scenario_file("name = [unterminated"))

        assert exc_info.value.violations[0]["field"] == "<file>"

    def test_load_missing_file(self, tmp_path):
        """A missing file is reported the same way"""
        with pytest.raises(ScenarioValidationError):
            ScenarioService.load_config(tmp_path / "absent.toml")

    def test_load_schema_violation(self, scenario_file):
        """A circle without radius fails the schema"""
        with pytest.raises(ScenarioValidationError) as exc_info:
            ScenarioService.load_config(scenario_file('[obstacle]\nkind = "circle"\n'))

        fields = [v["field"] for v in exc_info.value.violations]
        assert any(f.startswith("obstacle") for f in fields)

    def test_zero_excitation_is_rejected(self, scenario_file):
        """f ≡ 0 carries no information and fails the schema"""
        text = '[obstacle]\nkind = "circle"\nradius = 0.3\n\n[excitation]\nkind = "fourier"\ncoefficients = [{n = 2, a = 0.0, b = 0.0}]\n'

        with pytest.raises(ScenarioValidationError) as exc_info:
            ScenarioService.load_config(scenario_file(text))
        assert exc_info.value.violations[0]["field"] == "excitation"

    @pytest.mark.parametrize("preset", sorted(PRESETS.glob("*.toml")), ids=lambda p: p.stem)
    def test_presets_are_valid(self, preset):
        """Shipped presets load and carry warnings at most"""
        violations = ScenarioService.validate(ScenarioService.load_config(preset))

        assert all(v["severity"] == "warning" for v in violations)

    def test_oracle_needs_concentric_circles(self):
        """An off-center obstacle cannot use the oracle"""
        with pytest.raises(ValueError):
            _config(
                obstacle={"kind": "circle", "center": (0.2, 0.0), "radius": 0.3},
                data_source={"kind": "oracle"},
            )

    def test_valid_scenario(self):
        """Nested circles with a disk sweep have no violations"""
        assert ScenarioService.validate(_config()) == []

    def test_obstacle_outside_omega(self):
        """An obstacle crossing ∂Ω is an error"""
        config = _config(obstacle={"kind": "circle", "center": (0.8, 0.0), "radius": 0.5})
        violations = ScenarioService.validate(config)

        assert [v["field"] for v in violations] == ["obstacle"]
        assert violations[0]["severity"] == "error"

    def test_rational_angles_are_warnings(self):
        """Every corner of an equilateral triangle is flagged, without blocking the run"""
        config = _config(obstacle={
            "kind": "convex_polygon",
            "vertices": [(0.15, 0.0), (-0.075, 0.12990381056766578), (-0.075, -0.12990381056766578)],
        })
        violations = ScenarioService.validate(config)

        assert len(violations) == 3
        assert all(v["severity"] == "warning" for v in violations)
        assert violations[0]["field"] == "obstacle.vertices.0"
        assert "1/6" in violations[0]["message"]

    def test_disk_sweep_needs_radii(self):
        """Empty radius lists are errors"""
        violations = ScenarioService.validate(_config(sweep={"radii": []}))

        assert violations[0]["field"] == "sweep.radii"
        assert violations[0]["severity"] == "error"

    def test_polygon_nrt_needs_d0(self):
        """Polygon sweeps with the no-response test require d0"""
        config = _config(
            method="nrt",
            sweep={"family": "polygons", "template": [(0.1, 0.0), (-0.05, 0.08), (-0.05, -0.08)]},
        )
        violations = ScenarioService.validate(config)

        assert any(v["field"] == "sweep.d0" and v["severity"] == "error" for v in violations)

    @pytest.mark.parametrize("obstacle_nodes,sweep_nodes", [(64, 64), (128, 64), (64, 128)])
    def test_inverse_crime_warning(self, obstacle_nodes, sweep_nodes):
        """Solver data is flagged when either node count divides the other"""
        config = _config(
            obstacle={"kind": "circle", "radius": 0.3, "nodes": obstacle_nodes},
            sweep={"radii": [0.2], "nodes": sweep_nodes},
        )
        violations = ScenarioService.validate(config)

        assert [v["field"] for v in violations] == ["sweep.nodes"]
        assert violations[0]["severity"] == "warning"

    def test_unrelated_node_counts_pass(self):
        """96 obstacle nodes against 64 test-domain nodes share no grid"""
        config = _config(obstacle={"kind": "circle", "radius": 0.3, "nodes": 96}, sweep={"radii": [0.2], "nodes": 64})

        assert ScenarioService.validate(config) == []


class TestScenarioData:
    """Forward data derived from a scenario"""

    def test_oracle_data_and_singular_points(self):
        """Concentric oracle data carries the pole-ray singular points"""
        config = _config(
            obstacle={"kind": "circle", "radius": 0.5},
            excitation={"kind": "pole", "pole_radius": 1.25},
            data_source={"kind": "oracle"},
        )
        scenario = ScenarioService.build_data(config)

        assert scenario.oracle is not None
        assert scenario.data.omega.n == 256
        np.testing.assert_allclose(scenario.singular_points[:2], [[0.0, 0.0], [0.2, 0.0]])
        np.testing.assert_allclose(scenario.reference[0], [0.0, 0.0])
        np.testing.assert_allclose(scenario.reference[-1], [0.2, 0.0])
        assert np.all(scenario.reference[:, 1] == 0.0)

    def test_off_center_disk_has_a_limit_point(self):
        """An offset disk with an entire trace continues up to one point on the ray through its center"""
        config = _config(
            obstacle={"kind": "circle", "center": (0.15, 0.0), "radius": 0.25, "nodes": 96},
            excitation={"kind": "exp_cos"},
        )
        scenario = ScenarioService.build_data(config)

        np.testing.assert_allclose(scenario.singular_points, [[0.16026, 0.0]], atol=1e-5)
        np.testing.assert_allclose(scenario.reference, scenario.singular_points)
        assert scenario.data.solution is not None

    def test_non_circular_obstacle_uses_its_boundary(self):
        """Without known singular points the reference is ∂D"""
        config = _config(obstacle={"kind": "ellipse", "center": (0.2, 0.1), "semi_axes": (0.2, 0.1), "nodes": 96})
        scenario = ScenarioService.build_data(config)

        assert scenario.singular_points is None
        assert scenario.reference is scenario.obstacle
        assert scenario.data.solution is not None

    def test_noise_is_seeded(self):
        """The same seed reproduces the same noisy data"""
        config = _config(data_source={"kind": "oracle"}, noise_level=0.01, seed=3)
        first = ScenarioService.build_data(config).data
        second = ScenarioService.build_data(config).data

        np.testing.assert_array_equal(first.dnu_w, second.dnu_w)
        assert first.noise is not None

    def test_trial_densities(self, unit_circle):
        """cos θ first, then seeded random polynomials"""
        densities = ScenarioService.trial_densities(unit_circle, 3, seed=1)

        assert len(densities) == 3
        np.testing.assert_allclose(densities[0], np.cos(unit_circle.params))
        np.testing.assert_array_equal(densities[1], ScenarioService.trial_densities(unit_circle, 2, seed=1)[1])


class TestScenarioRun:
    """End-to-end run on a small concentric scenario"""

    def test_run_writes_every_output(self, scenario_file, tmp_path):
        """Outputs, classifications and report fields of a full run"""
        config = ScenarioService.load_config(scenario_file(SMALL_CONCENTRIC))
        out = tmp_path / "out"
        summary = ScenarioService.run(config, out)

        assert summary["total_domains"] == 2
        assert summary["positive_domains"] == 1
        assert summary["failed_domains"] == 0
        assert summary["agreement"] is True
        for name in ("indicators.csv", "mask.pgm", "mask.json", "duality_report.json", "cauchy.csv",
                     "omega_nodes.csv", "obstacle_nodes.csv", "indicators.db"):
            assert (out / name).exists()
        assert (out / "operators" / "dnu_w.bin").exists()
        assert (out / "operators" / "R_disks-0001.bin").exists()

        with open(out / "indicators.csv") as handle:
            rows = list(csv.DictReader(handle))
        assert [row["classification_rt"] for row in rows] == ["infinite", "finite"]
        assert rows[0]["rt_value"] == "inf"

        report = json.loads((out / "duality_report.json").read_text())
        assert report["singular_points"][1] == pytest.approx([0.2, 0.0])
        assert report["hausdorff_singular"] is not None
        assert len(report["green_identity"]) == 2
        assert max(report["green_identity"]) <= 1e-6
        assert report["domains"][1]["in_margin_band"] is False
        assert report["duality_truncation"] == 1e-12
        assert report["excluded_domains"] == 0

        assert summary["database"]["total"] == 2
        assert summary["database"]["finite_rt"] == 1
        assert summary["database"]["infinite_rt"] == 1
        assert "rows" not in summary["database"]

    def test_offset_disk_preset_reaches_the_limit_point(self, tmp_path):
        """The offset-disk preset reconstructs the accumulation point of the reflected images to 0.1"""
        config = ScenarioService.load_config(PRESETS / "offset_disk.toml")
        summary = ScenarioService.run(config, tmp_path / "out", threads=4)

        assert summary["failed_domains"] == 0
        assert summary["positive_domains"] > 0
        assert summary["excluded_domains"] > 0
        assert summary["hausdorff_singular"] is not None
        assert summary["hausdorff_singular"] <= 0.1

        report = json.loads((tmp_path / "out" / "duality_report.json").read_text())
        assert report["singular_points"][0] == pytest.approx([0.16026, 0.0], abs=1e-5)
        assert sum(d["in_margin_band"] for d in report["domains"]) == summary["excluded_domains"]
        meta = json.loads((tmp_path / "out" / "mask.json").read_text())
        assert meta["excluded_count"] == summary["excluded_domains"]

    def test_noisy_runs_are_reproducible(self, scenario_file, tmp_path):
        """A fixed seed gives byte-identical indicator and mask files"""
        text = SMALL_CONCENTRIC.replace('name = "small"', 'name = "small"\nnoise_level = 1e-3\nseed = 7')
        config = ScenarioService.load_config(scenario_file(text))
        ScenarioService.run(config, tmp_path / "first")
        ScenarioService.run(config, tmp_path / "second")

        for name in ("indicators.csv", "mask.pgm"):
            assert (tmp_path / "first" / name).read_bytes() == (tmp_path / "second" / name).read_bytes()

    def test_run_refuses_invalid_scenarios(self, tmp_path):
        """Error violations stop the run before any output is written"""
        config = _config(obstacle={"kind": "circle", "center": (0.8, 0.0), "radius": 0.5})

        with pytest.raises(ScenarioValidationError):
            ScenarioService.run(config, tmp_path / "out")
        assert not (tmp_path / "out").exists()


class TestOutputService:
    """File writers"""

    def test_indicators_csv(self, tmp_path):
        """Columns, inf formatting and error records"""
        records = [
            _record("disks-0000", 0.1, finite=False),
            _record("disks-0001", 0.5),
            _record("disks-0002", 0.3, error={"error": "geometry_error", "message": "x", "details": {}}),
        ]
        path = OutputService.write_indicators_csv(tmp_path / "indicators.csv", records, UnitDiskFrame())

        with open(path) as handle:
            reader = csv.DictReader(handle)
            assert reader.fieldnames == OutputService.INDICATOR_COLUMNS
            rows = list(reader)
        assert rows[0]["rt_value"] == "inf"
        assert rows[0]["classification_nrt"] == "infinite"
        assert float(rows[1]["rt_value"]) == 2.5
        assert float(rows[1]["size"]) == 0.5
        assert rows[2]["error"] == "geometry_error"
        assert rows[2]["rt_value"] == ""

    def test_domain_params_in_user_coordinates(self):
        """Centers and sizes are mapped back through the frame"""
        domain = TestDomain(curve=make_circle((0.5, 0.0), 0.25, 16), id="g")
        params = OutputService.domain_params(SweepRecord(domain=domain), UnitDiskFrame(center=(1.0, 0.0), radius=2.0))

        assert params["cx"] == pytest.approx(2.0)
        assert params["cy"] == pytest.approx(0.0)
        assert params["size"] == pytest.approx(0.5)

    def test_mask_pgm(self, tmp_path):
        """Plain PGM with the top row first and a JSON sidecar"""
        occupancy = np.array([[True, True, False], [False, False, False]])
        mask = ReconstructionMask(origin=(-1.0, -1.0), spacing=1.0, occupancy=occupancy, positive_count=1)
        pgm, sidecar = OutputService.write_mask_pgm(tmp_path / "mask.pgm", mask, UnitDiskFrame(radius=2.0))

        lines = pgm.read_text().splitlines()
        assert lines[:3] == ["P2", "3 2", "255"]
        assert lines[3] == "0 0 0"
        assert lines[4] == "255 255 0"
        meta = json.loads(sidecar.read_text())
        assert meta["spacing"] == 2.0
        assert meta["origin"] == [-2.0, -2.0]
        assert meta["row_order"] == "top_to_bottom"

    def test_json_converts_non_finite_values(self, tmp_path):
        """Infinite floats and numpy values become JSON-safe"""
        path = OutputService.write_json(tmp_path / "r.json", {"a": math.inf, "b": [np.float64(1.5), -math.inf]})

        assert json.loads(path.read_text()) == {"a": "inf", "b": [1.5, "-inf"]}

    def test_cauchy_csv(self, tmp_path, cos_data):
        """One row per boundary node with Neumann data scaled by the frame"""
        path = OutputService.write_cauchy_csv(tmp_path / "cauchy.csv", cos_data, UnitDiskFrame(radius=2.0))

        with open(path) as handle:
            rows = list(csv.DictReader(handle))
        assert len(rows) == cos_data.omega.n
        assert float(rows[0]["x"]) == pytest.approx(2.0)
        assert float(rows[0]["dnu_w"]) == pytest.approx(cos_data.dnu_w[0] / 2.0)

    def test_operator_dumps(self, tmp_path, cos_data):
        """R per successful domain plus the data vector"""
        records = [
            _record("disks-0000", 0.5),
            _record("disks-0001", 0.3, error={"error": "space_error", "message": "x", "details": {}}),
        ]
        written = OutputService.write_operator_dumps(tmp_path / "ops", cos_data, records)

        assert [p.name for p in written] == ["dnu_w.bin", "R_disks-0000.bin"]
        assert load_matrix(written[1]).shape == (cos_data.omega.n, 16)


class TestResultStore:
    """Upserts of sweep records"""

    def test_store_records(self, db_session):
        """Every record becomes one row"""
        records = [_record("disks-0000", 0.1, finite=False), _record("disks-0001", 0.5)]
        result = ResultStore.store_records("s", records, UnitDiskFrame(), db_session)

        assert result["total_rows"] == 2
        assert result["valid_rows"] == 2
        assert result["invalid_rows"] == 0
        assert len(result["errors"]) == 0

    def test_infinite_values_are_null(self, db_session):
        """Divergent indicators are stored as NULL with their classification"""
        ResultStore.store_records("s", [_record("disks-0000", 0.1, finite=False)], UnitDiskFrame(), db_session)

        row = db_session.query(IndicatorRecordRow).filter(IndicatorRecordRow.domain_id == "disks-0000").first()
        assert row.rt_value is None
        assert row.nrt_value is None
        assert row.classification_rt == "infinite"
        assert row.to_dict()["params"]["size"] == pytest.approx(0.1)

    def test_duplicate_domain_updates_row(self, db_session):
        """A second run of the same scenario overwrites its rows"""
        ResultStore.store_records("s", [_record("disks-0000", 0.1, finite=False)], UnitDiskFrame(), db_session)
        result = ResultStore.store_records("s", [_record("disks-0000", 0.1)], UnitDiskFrame(), db_session)
        assert result["valid_rows"] == 1

        rows = db_session.query(IndicatorRecordRow).filter(IndicatorRecordRow.domain_id == "disks-0000").all()
        assert len(rows) == 1
        assert rows[0].rt_value == 2.5
        assert rows[0].classification_rt == "finite"

    def test_scenarios_are_separate(self, db_session):
        """The same domain id under two scenarios gives two rows"""
        ResultStore.store_records("a", [_record("disks-0000", 0.1)], UnitDiskFrame(), db_session)
        ResultStore.store_records("b", [_record("disks-0000", 0.1)], UnitDiskFrame(), db_session)

        assert db_session.query(IndicatorRecordRow).count() == 2

    def test_summary(self, db_session):
        """Counts by RT classification"""
        records = [_record("disks-0000", 0.1, finite=False), _record("disks-0001", 0.5), _record("disks-0002", 0.7)]
        ResultStore.store_records("s", records, UnitDiskFrame(), db_session)
        summary = ResultStore.summary("s", db_session)

        assert summary["total"] == 3
        assert summary["finite_rt"] == 2
        assert summary["infinite_rt"] == 1
        assert [row["domain_id"] for row in summary["rows"]] == ["disks-0000", "disks-0001", "disks-0002"]

    def test_error_records_are_stored(self, db_session):
        """Failed domains keep their error record"""
        error = {"error": "geometry_error", "message": "outside", "details": {}}
        ResultStore.store_records("s", [_record("disks-0000", 0.3, error=error)], UnitDiskFrame(), db_session)

        row = db_session.query(IndicatorRecordRow).first()
        assert row.to_dict()["error"] == error
        assert row.classification_rt is None
