import csv
import json
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import AbstractSet, Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError
from sqlalchemy.orm import Session

from app.config import get_settings
from app.database import session_factory
from app.errors import GeometryError, ParameterError, PlanError, ProbeError, ScenarioValidationError
from app.forward import (
    CauchyData,
    ConcentricAnnulusOracle,
    Excitation,
    disk_singular_points,
    hull_samples,
    solve_annular_dirichlet,
)
from app.geometry import (
    BoundaryCurve,
    CurveKind,
    UnitDiskFrame,
    check_distance_property,
    ensure_inside,
    possibly_rational_angles,
)
from app.indicators import green_identity_check, taylor_growth_diagnostic
from app.models import IndicatorRecordRow
from app.operators import assemble_R, save_matrix
from app.reconstruction import (
    Method,
    ReconstructionMask,
    SweepFamily,
    SweepRecord,
    hausdorff_distance,
    hausdorff_to_points,
    intersect_positive,
    polygon_mode_sweep,
    sweep,
)
from app.schemas import ScenarioConfig

logger = logging.getLogger(__name__)

MARGIN_SPACINGS = 1.5


def _fmt(value: Optional[float]) -> str:
    """17 significant digits; 'inf' for divergent indicators, empty when absent"""
    if value is None:
        return ""
    if math.isinf(value):
        return "inf"
    return format(float(value), ".17g")


def _violation(field: str, message: str, severity: str = "error") -> Dict[str, str]:
    return {"field": field, "message": message, "severity": severity}


@dataclass(frozen=True)
class ScenarioData:
    """Everything a run derives from the scenario before sweeping"""

    frame: UnitDiskFrame
    omega: BoundaryCurve
    obstacle: BoundaryCurve
    excitation: Excitation
    data: CauchyData
    oracle: Optional[ConcentricAnnulusOracle]
    singular_points: Optional[np.ndarray]

    @cached_property
    def reference(self):
        """What the dichotomy is decided against: the hull of the singular points of the continued w when known, else ∂D"""
        if self.singular_points is not None:
            return hull_samples(self.singular_points)
        return self.obstacle


class ScenarioService:

    @staticmethod
    def load_config(path) -> ScenarioConfig:
        """
        Read and validate a TOML scenario file

        Args:
            path: Scenario file path

        Returns:
            Validated ScenarioConfig
        """
        try:
            with open(path, "rb") as handle:
                raw = tomllib.load(handle)
        except (OSError, tomllib.TOMLDecodeError) as e:
            raise ScenarioValidationError([_violation("<file>", str(e))])
        try:
            return ScenarioConfig(**raw)
        except ValidationError as e:
            raise ScenarioValidationError(ScenarioService.violations_from(e))

    @staticmethod
    def violations_from(exc: ValidationError) -> List[Dict[str, str]]:
        """Flatten pydantic errors into violation records"""
        return [
            _violation(".".join(str(part) for part in err["loc"]) or "<root>", err["msg"])
            for err in exc.errors()
        ]

    @staticmethod
    def validate(config: ScenarioConfig) -> List[Dict[str, str]]:
        """
        Geometry and hypothesis checks beyond the schema

        Args:
            config: Schema-valid scenario

        Returns:
            Violations; severity 'error' blocks a run, 'warning' does not
        """
        violations = []
        frame = config.frame
        try:
            omega = config.omega.build(frame)
            obstacle = config.obstacle.build(frame)
        except ProbeError as e:
            return [_violation("obstacle", e.message)]

        try:
            ensure_inside(obstacle, omega, label="obstacle")
        except GeometryError as e:
            violations.append(_violation("obstacle", e.message))
            return violations

        if obstacle.kind is CurveKind.CONVEX_POLYGON:
            distance_ok = check_distance_property(obstacle, omega)
            flagged = possibly_rational_angles(obstacle)
            if not distance_ok and len(flagged) == len(obstacle.vertices):
                violations.append(_violation(
                    "obstacle",
                    "polygon fails the distance property and every corner angle is possibly rational",
                    "warning",
                ))
            for corner in flagged:
                violations.append(_violation(
                    f"obstacle.vertices.{corner['vertex']}",
                    f"possibly rational angle 2pi*{corner['q']}/{corner['p']}",
                    "warning",
                ))

        sweep_spec = config.sweep
        if sweep_spec.family == "disks" and not sweep_spec.radii:
            violations.append(_violation("sweep.radii", "disk sweep needs at least one radius"))
        if sweep_spec.family == "polygons" and config.method != "rt" and sweep_spec.d0 is None:
            violations.append(_violation("sweep.d0", "the no-response test on polygons needs an a priori polygon d0"))

        try:
            plan = sweep_spec.to_plan(frame, margin=0.0)
            domains = plan.generate(omega) if not any(v["severity"] == "error" for v in violations) else []
        except ProbeError as e:
            violations.append(_violation("sweep", e.message))
            domains = []

        if config.data_source.kind == "solver":
            for domain in domains:
                count = domain.curve.n
                if count % obstacle.n == 0 or obstacle.n % count == 0:
                    violations.append(_violation(
                        "sweep.nodes",
                        f"test domain node count {count} matches the forward obstacle grid (inverse crime)",
                        "warning",
                    ))
                    break

        for violation in violations:
            log = logger.error if violation["severity"] == "error" else logger.warning
            log("%s: %s", violation["field"], violation["message"])
        return violations

    @staticmethod
    def build_data(config: ScenarioConfig) -> ScenarioData:
        """
        Forward data in the unit-disk working frame, noise included

        Args:
            config: Validated scenario

        Returns:
            ScenarioData
        """
        frame = config.frame
        omega = config.omega.build(frame)
        obstacle = config.obstacle.build(frame)
        excitation = config.excitation.to_excitation()

        oracle = None
        if config.data_source.kind == "oracle":
            r_d = obstacle.shape["radius"]
            oracle = ConcentricAnnulusOracle(1.0, r_d, excitation.fourier_coefficients())
            data = oracle.cauchy_data(omega.n)
        else:
            data = solve_annular_dirichlet(omega, obstacle, excitation.trace(omega.params))

        if config.noise_level > 0:
            data = data.with_noise(config.noise_level, np.random.default_rng(config.seed))

        singular = None
        if obstacle.kind is CurveKind.CIRCLE:
            singular = disk_singular_points(obstacle.shape["center"], obstacle.shape["radius"], excitation)
        return ScenarioData(
            frame=frame,
            omega=omega,
            obstacle=obstacle,
            excitation=excitation,
            data=data,
            oracle=oracle,
            singular_points=singular,
        )

    @staticmethod
    def run(config: ScenarioConfig, out_dir, threads: int = 1) -> Dict[str, Any]:
        """
        Full pipeline: validate, forward data, sweep, reconstruct, emit outputs

        Args:
            config: Scenario
            out_dir: Output directory (created if missing)
            threads: Worker cap for the sweep

        Returns:
            Run summary
        """
        violations = ScenarioService.validate(config)
        if any(v["severity"] == "error" for v in violations):
            raise ScenarioValidationError(violations)
        warnings = [v for v in violations if v["severity"] == "warning"]

        scenario = ScenarioService.build_data(config)
        data = scenario.data
        frame = scenario.frame
        margin = config.sweep.margin_exclusion
        margin = frame.length_to_unit(margin) if margin is not None else MARGIN_SPACINGS * scenario.obstacle.spacing
        plan = config.sweep.to_plan(frame, margin)
        options = config.indicators.to_options(config.schedule)
        method = Method(config.method)
        resolution = frame.length_to_unit(config.indicators.grid_resolution)

        if plan.family is SweepFamily.POLYGONS:
            d0 = config.sweep.d0.build(frame) if config.sweep.d0 is not None else None
            records, mask = polygon_mode_sweep(
                data, plan, d0, method, options, resolution, threads, reference=scenario.reference
            )
        else:
            records = sweep(data, plan.generate(data.omega), method, options, threads)
            if not records:
                raise PlanError("sweep plan produced no test domain inside the outer boundary")
        band = plan.margin_band([record.domain for record in records], scenario.reference)
        if plan.family is SweepFamily.DISKS:
            mask = intersect_positive(records, data.omega, resolution, band)

        report = ScenarioService.duality_report(config, scenario, records, mask, margin, band)
        report["warnings"] = warnings + [{"field": "data", "message": w, "severity": "warning"} for w in data.warnings]
        if mask.warning:
            report["warnings"].append(_violation("mask", mask.warning, "warning"))
        if "metric_error" in report:
            report["warnings"].append(_violation("hausdorff", report["metric_error"]["message"], "warning"))

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = OutputService.write_outputs(config, scenario, records, mask, report, out)

        summary = {
            "scenario": config.name,
            "total_domains": len(records),
            "positive_domains": mask.positive_count,
            "excluded_domains": mask.excluded_count,
            "failed_domains": sum(r.error is not None for r in records),
            "agreement": report["agreement"],
            "hausdorff": report.get("hausdorff"),
            "hausdorff_singular": report.get("hausdorff_singular"),
            "outputs": [str(p) for p in written],
            "warnings": report["warnings"],
        }
        if "indicators_db" in config.outputs:
            summary["database"] = OutputService.database_summary(OutputService.database_url(out), config.name)
        logger.info("run %s: %d domains, %d positive", config.name, summary["total_domains"], summary["positive_domains"])
        return summary

    @staticmethod
    def trial_densities(omega: BoundaryCurve, count: int, seed: int) -> List[np.ndarray]:
        """cos θ first, then seeded random trigonometric polynomials of degree <= 8"""
        theta = omega.params
        densities = [np.cos(theta)]
        rng = np.random.default_rng(seed)
        while len(densities) < count:
            a, b = rng.standard_normal(9), rng.standard_normal(9)
            modes = np.arange(9)
            densities.append(np.cos(np.outer(theta, modes)) @ a + np.sin(np.outer(theta, modes)) @ b)
        return densities[:count]

    @staticmethod
    def duality_report(
        config: ScenarioConfig,
        scenario: ScenarioData,
        records: Sequence[SweepRecord],
        mask: ReconstructionMask,
        margin: float,
        band: AbstractSet[str] = frozenset(),
    ) -> Dict[str, Any]:
        """
        Per-domain duality gaps and classifications plus ground-truth diagnostics

        Domains in the margin band are flagged and were left out of the mask;
        their classifications are still listed.
        """
        domains = []
        for record in records:
            domains.append({
                "domain_id": record.domain.id,
                "rt": record.rt.to_dict() if record.rt else None,
                "nrt": record.nrt.to_dict() if record.nrt else None,
                "rt_variant": record.rt_variant.to_dict() if record.rt_variant else None,
                "duality_gap": record.duality_gap,
                "agree": record.agree,
                "in_margin_band": record.domain.id in band,
                "error": record.error,
            })

        agreement = [d["agree"] for d in domains if d["agree"] is not None]
        report: Dict[str, Any] = {
            "scenario": config.name,
            "method": config.method,
            "margin_exclusion": margin * scenario.frame.radius,
            "excluded_domains": len(band),
            "duality_truncation": config.indicators.truncation,
            "domains": domains,
            "agreement": all(agreement) if agreement else None,
            "singular_points": (
                scenario.frame.from_unit(scenario.singular_points).tolist()
                if scenario.singular_points is not None else None
            ),
        }

        try:
            report["hausdorff"] = hausdorff_distance(mask, scenario.obstacle) * scenario.frame.radius
            if scenario.singular_points is not None:
                report["hausdorff_singular"] = hausdorff_to_points(mask, scenario.reference) * scenario.frame.radius
        except ProbeError as e:
            logger.warning("reconstruction metrics unavailable: %s", e.message)
            report["hausdorff"] = None
            report["hausdorff_singular"] = None
            report["metric_error"] = e.to_dict()

        report["green_identity"] = ScenarioService._green_identity(config, scenario)
        report["taylor"] = [
            ScenarioService._taylor(scenario, point.z, point.rho, point.ell_max) for point in config.diagnostics.taylor
        ]
        return report

    @staticmethod
    def _green_identity(config: ScenarioConfig, scenario: ScenarioData) -> List[float]:
        data = scenario.data
        obstacle = scenario.obstacle
        kwargs = {}
        if scenario.oracle is not None:
            kwargs = {
                "v_field": scenario.oracle.v_field,
                "dnu_w_on_d": scenario.oracle.w_field.normal_derivative(obstacle.nodes, obstacle.normals),
            }
        elif data.solution is None:
            return []
        trials = ScenarioService.trial_densities(data.omega, config.diagnostics.green_identity_trials, config.seed)
        return [green_identity_check(data, obstacle, phi, **kwargs) for phi in trials]

    @staticmethod
    def _taylor(scenario: ScenarioData, z, rho: float, ell_max: int) -> Dict[str, Any]:
        frame = scenario.frame
        try:
            diagnostic = taylor_growth_diagnostic(
                scenario.data, frame.to_unit(z), frame.length_to_unit(rho), ell_max
            )
        except ParameterError as e:
            return {"z": list(z), "rho": rho, "error": e.to_dict()}
        return {
            "z": list(z),
            "rho": rho,
            "continuation": diagnostic.continuation.tolist(),
            "regular_part": diagnostic.regular_part.tolist(),
            "growing": diagnostic.is_growing(),
        }


class OutputService:
    """Writers for every output kind a scenario can request"""

    INDICATOR_COLUMNS = [
        "domain_id", "kind", "cx", "cy", "size",
        "rt_value", "rt_slope", "nrt_value", "nrt_slope",
        "classification_rt", "classification_nrt", "duality_gap", "error",
    ]

    @staticmethod
    def write_outputs(
        config: ScenarioConfig,
        scenario: ScenarioData,
        records: Sequence[SweepRecord],
        mask: ReconstructionMask,
        report: Dict[str, Any],
        out: Path,
    ) -> List[Path]:
        written = []
        frame = scenario.frame
        for kind in dict.fromkeys(config.outputs):
            if kind == "indicators_csv":
                written.append(OutputService.write_indicators_csv(out / "indicators.csv", records, frame))
            elif kind == "mask_pgm":
                written.extend(OutputService.write_mask_pgm(out / "mask.pgm", mask, frame))
            elif kind == "duality_report_json":
                written.append(OutputService.write_json(out / "duality_report.json", report))
            elif kind == "cauchy_csv":
                written.append(OutputService.write_cauchy_csv(out / "cauchy.csv", scenario.data, frame))
            elif kind == "curve_nodes_csv":
                written.append(OutputService.write_curve_nodes_csv(out / "omega_nodes.csv", scenario.omega, frame))
                written.append(OutputService.write_curve_nodes_csv(out / "obstacle_nodes.csv", scenario.obstacle, frame))
            elif kind == "operator_dump":
                written.extend(OutputService.write_operator_dumps(out / "operators", scenario.data, records))
            elif kind == "indicators_db":
                url = OutputService.database_url(out)
                written.append(OutputService.write_indicators_db(url, config.name, records, frame))
        return written

    @staticmethod
    def database_url(out: Path) -> str:
        return get_settings().database_url or f"sqlite:///{out / 'indicators.db'}"

    @staticmethod
    def database_summary(database_url: str, scenario: str) -> Dict[str, Any]:
        """Stored classification counts for one scenario, without the rows"""
        db = session_factory(database_url)()
        try:
            summary = ResultStore.summary(scenario, db)
        finally:
            db.close()
        summary.pop("rows")
        return summary

    @staticmethod
    def domain_params(record: SweepRecord, frame: UnitDiskFrame) -> Dict[str, Any]:
        """Center and size of a test domain in user coordinates"""
        curve = record.domain.curve
        if curve.kind is CurveKind.CIRCLE:
            center = np.asarray(curve.shape["center"])
            size = curve.shape["radius"]
        else:
            points = curve.vertices if curve.vertices is not None else curve.nodes
            center = points.mean(axis=0)
            size = float(np.max(np.linalg.norm(points - center, axis=1)))
        cx, cy = frame.from_unit(center)
        params = {"cx": float(cx), "cy": float(cy), "size": size * frame.radius}
        if curve.vertices is not None:
            params["vertices"] = frame.from_unit(curve.vertices).tolist()
        return params

    @staticmethod
    def write_indicators_csv(path: Path, records: Sequence[SweepRecord], frame: UnitDiskFrame) -> Path:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(OutputService.INDICATOR_COLUMNS)
            for record in records:
                params = OutputService.domain_params(record, frame)
                writer.writerow([
                    record.domain.id,
                    record.domain.curve.kind.value,
                    _fmt(params["cx"]),
                    _fmt(params["cy"]),
                    _fmt(params["size"]),
                    _fmt(record.rt.value) if record.rt else "",
                    _fmt(record.rt.slope) if record.rt else "",
                    _fmt(record.nrt.value) if record.nrt else "",
                    _fmt(record.nrt.slope) if record.nrt else "",
                    record.rt.classification.value if record.rt else "",
                    record.nrt.classification.value if record.nrt else "",
                    _fmt(record.duality_gap),
                    record.error["error"] if record.error else "",
                ])
        return path

    @staticmethod
    def write_mask_pgm(path: Path, mask: ReconstructionMask, frame: UnitDiskFrame) -> List[Path]:
        """Plain PGM (P2), 255 inside, first row at the top; sidecar holds the grid in user coordinates"""
        rows, cols = mask.shape
        image = np.where(mask.occupancy[::-1], 255, 0)
        with open(path, "w") as handle:
            handle.write(f"P2\n{cols} {rows}\n255\n")
            for row in image:
                handle.write(" ".join(str(int(v)) for v in row) + "\n")

        sidecar = mask.sidecar()
        sidecar["origin"] = frame.from_unit(mask.origin).tolist()
        sidecar["spacing"] = mask.spacing * frame.radius
        sidecar["row_order"] = "top_to_bottom"
        sidecar_path = path.with_suffix(".json")
        OutputService.write_json(sidecar_path, sidecar)
        return [path, sidecar_path]

    @staticmethod
    def write_json(path: Path, payload: Dict[str, Any]) -> Path:
        def default(value):
            if isinstance(value, np.generic):
                return value.item()
            if isinstance(value, np.ndarray):
                return value.tolist()
            raise TypeError(f"not serializable: {type(value).__name__}")

        def finite(value):
            if isinstance(value, float) and not math.isfinite(value):
                return "inf" if value > 0 else "-inf"
            if isinstance(value, dict):
                return {k: finite(v) for k, v in value.items()}
            if isinstance(value, (list, tuple)):
                return [finite(v) for v in value]
            return value

        with open(path, "w") as handle:
            json.dump(finite(payload), handle, indent=2, sort_keys=True, default=default)
            handle.write("\n")
        return path

    @staticmethod
    def write_cauchy_csv(path: Path, data: CauchyData, frame: UnitDiskFrame) -> Path:
        """Cauchy data on ∂Ω in user coordinates"""
        points = frame.from_unit(data.omega.nodes)
        fluxes = [frame.flux_from_unit(v) for v in (data.dnu_u, data.dnu_v, data.dnu_w)]
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["theta", "x", "y", "f", "dnu_u", "dnu_v", "dnu_w"])
            for i, theta in enumerate(data.theta):
                writer.writerow([_fmt(theta), _fmt(points[i, 0]), _fmt(points[i, 1]), _fmt(data.f[i])]
                                + [_fmt(flux[i]) for flux in fluxes])
        return path

    @staticmethod
    def write_curve_nodes_csv(path: Path, curve: BoundaryCurve, frame: UnitDiskFrame) -> Path:
        points = frame.from_unit(curve.nodes)
        weights = curve.weights * frame.radius
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(["x", "y", "nx", "ny", "w"])
            for point, normal, weight in zip(points, curve.normals, weights):
                writer.writerow([_fmt(point[0]), _fmt(point[1]), _fmt(normal[0]), _fmt(normal[1]), _fmt(weight)])
        return path

    @staticmethod
    def write_operator_dumps(directory: Path, data: CauchyData, records: Sequence[SweepRecord]) -> List[Path]:
        """R of every swept domain plus the ∂νw vector, working frame"""
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        path = directory / "dnu_w.bin"
        save_matrix(path, data.dnu_w)
        written.append(path)
        for record in records:
            if record.error is not None:
                continue
            path = directory / f"R_{record.domain.id}.bin"
            save_matrix(path, assemble_R(record.domain.curve, data.omega).matrix)
            written.append(path)
        return written

    @staticmethod
    def write_indicators_db(database_url: str, scenario: str, records: Sequence[SweepRecord], frame: UnitDiskFrame) -> str:
        """Upsert the records into the results database; PROBE_DATABASE_URL overrides the per-run file"""
        factory = session_factory(database_url)
        db = factory()
        try:
            result = ResultStore.store_records(scenario, records, frame, db)
            if result["errors"]:
                logger.warning("%d result rows were not stored", result["invalid_rows"])
        finally:
            db.close()
        return database_url


class ResultStore:
    """Persistence of sweep records"""

    @staticmethod
    def store_records(
        scenario: str,
        records: Sequence[SweepRecord],
        frame: UnitDiskFrame,
        db: Session
    ) -> Dict[str, Any]:
        """
        Upsert sweep records on (scenario, domain_id)

        Args:
            scenario: Scenario name
            records: Sweep records
            frame: Frame used to report domain parameters
            db: Database session

        Returns:
            Dictionary with store statistics and errors
        """
        valid_count = 0
        invalid_count = 0
        errors = []

        for record in records:
            try:
                values = ResultStore._prepare_row(scenario, record, frame)
                existing = db.query(IndicatorRecordRow).filter(
                    IndicatorRecordRow.scenario == scenario,
                    IndicatorRecordRow.domain_id == record.domain.id
                ).first()

                if existing:
                    for key, value in values.items():
                        setattr(existing, key, value)
                else:
                    db.add(IndicatorRecordRow(**values))

                db.commit()
                valid_count += 1

            except Exception as e:
                db.rollback()
                invalid_count += 1
                errors.append({
                    "domain_id": record.domain.id,
                    "errors": [str(e)]
                })

        return {
            "total_rows": len(records),
            "valid_rows": valid_count,
            "invalid_rows": invalid_count,
            "errors": errors
        }

    @staticmethod
    def _prepare_row(scenario: str, record: SweepRecord, frame: UnitDiskFrame) -> Dict[str, Any]:
        """Column values; divergent indicators become NULL with classification 'infinite'"""

        def finite_or_none(value):
            return value if value is not None and math.isfinite(value) else None

        return {
            "scenario": scenario,
            "domain_id": record.domain.id,
            "kind": record.domain.curve.kind.value,
            "params": json.dumps(OutputService.domain_params(record, frame), sort_keys=True),
            "rt_value": finite_or_none(record.rt.value) if record.rt else None,
            "rt_slope": record.rt.slope if record.rt else None,
            "nrt_value": finite_or_none(record.nrt.value) if record.nrt else None,
            "nrt_slope": record.nrt.slope if record.nrt else None,
            "classification_rt": record.rt.classification.value if record.rt else None,
            "classification_nrt": record.nrt.classification.value if record.nrt else None,
            "duality_gap": record.duality_gap,
            "error": json.dumps(record.error, sort_keys=True) if record.error else None,
        }

    @staticmethod
    def summary(scenario: str, db: Session) -> Dict[str, Any]:
        """Counts of stored rows by classification"""
        query = db.query(IndicatorRecordRow).filter(IndicatorRecordRow.scenario == scenario)
        total = query.count()
        finite = query.filter(IndicatorRecordRow.classification_rt == "finite").count()
        infinite = query.filter(IndicatorRecordRow.classification_rt == "infinite").count()
        return {
            "scenario": scenario,
            "total": total,
            "finite_rt": finite,
            "infinite_rt": infinite,
            "rows": [row.to_dict() for row in query.order_by(IndicatorRecordRow.domain_id).all()],
        }
