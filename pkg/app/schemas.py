from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from app.forward import Excitation
from app.geometry import BoundaryCurve, UnitDiskFrame, make_circle, make_convex_polygon, make_ellipse
from app.indicators import NRT_LADDER, RegularizationSchedule
from app.reconstruction import IndicatorOptions, SweepFamily, SweepPlan

Point = Tuple[float, float]
OutputKind = Literal[
    "indicators_csv",
    "mask_pgm",
    "duality_report_json",
    "cauchy_csv",
    "curve_nodes_csv",
    "operator_dump",
    "indicators_db",
]


class CurveSpec(BaseModel):
    """Curve description in user coordinates"""
    kind: Literal["circle", "ellipse", "convex_polygon"] = "circle"
    center: Point = (0.0, 0.0)
    radius: Optional[float] = Field(default=None, gt=0)
    semi_axes: Optional[Tuple[float, float]] = None
    rotation: float = 0.0
    vertices: Optional[List[Point]] = None
    nodes: int = Field(default=128, ge=8, description="Node count of smooth curves")
    nodes_per_edge: int = Field(default=32, ge=4)
    grading: float = Field(default=3.0, ge=1.0)

    @field_validator('nodes')
    @classmethod
    def validate_even(cls, v):
        """Smooth-curve quadrature needs an even node count"""
        if v % 2:
            raise ValueError('nodes must be even')
        return v

    @field_validator('semi_axes')
    @classmethod
    def validate_axes(cls, v):
        if v is not None and min(v) <= 0:
            raise ValueError('semi_axes must be positive')
        return v

    @model_validator(mode='after')
    def validate_shape(self):
        """Every kind needs its own shape parameters"""
        if self.kind == 'circle' and self.radius is None:
            raise ValueError('circle requires radius')
        if self.kind == 'ellipse' and self.semi_axes is None:
            raise ValueError('ellipse requires semi_axes')
        if self.kind == 'convex_polygon' and (self.vertices is None or len(self.vertices) < 3):
            raise ValueError('convex_polygon requires at least 3 vertices')
        return self

    def build(self, frame: UnitDiskFrame = UnitDiskFrame()) -> BoundaryCurve:
        """Discretize in the working frame where Ω is the unit disk"""
        center = frame.to_unit(self.center)
        if self.kind == 'circle':
            return make_circle(center, frame.length_to_unit(self.radius), self.nodes)
        if self.kind == 'ellipse':
            axes = tuple(frame.length_to_unit(a) for a in self.semi_axes)
            return make_ellipse(center, axes, self.rotation, self.nodes)
        return make_convex_polygon(frame.to_unit(self.vertices), self.nodes_per_edge, self.grading)


class FourierTerm(BaseModel):
    n: int = Field(ge=0)
    a: float = 0.0
    b: float = 0.0


class ExcitationSpec(BaseModel):
    """Dirichlet data f on ∂Ω: a named preset or a Fourier list"""
    kind: Literal["cos", "exp_cos", "pole", "fourier"] = "cos"
    coefficients: List[FourierTerm] = Field(default_factory=list)
    pole_radius: float = Field(default=2.0, gt=1.0)
    pole_angle: float = 0.0

    @model_validator(mode='after')
    def reject_zero_trace(self):
        """f ≡ 0 carries no information about D"""
        if self.kind == 'fourier' and not any(t.a or (t.b and t.n) for t in self.coefficients):
            raise ValueError('excitation is identically zero')
        return self

    def to_excitation(self) -> Excitation:
        return Excitation(
            kind=self.kind,
            coefficients={t.n: (t.a, t.b) for t in self.coefficients},
            pole_radius=self.pole_radius,
            pole_angle=self.pole_angle,
        )


class DataSourceSpec(BaseModel):
    """Forward data: the boundary-integral solver at the obstacle resolution, or the concentric oracle"""
    kind: Literal["solver", "oracle"] = "solver"


class ScheduleSpec(BaseModel):
    alpha0: float = Field(default=1e-2, gt=0)
    ratio: float = Field(default=0.5, gt=0, lt=1)
    steps: int = Field(default=40, ge=10)

    def to_schedule(self) -> RegularizationSchedule:
        return RegularizationSchedule(alpha0=self.alpha0, ratio=self.ratio, steps=self.steps)


class IndicatorSettings(BaseModel):
    """Decision rule and grid settings shared by every test domain"""
    truncation: float = Field(default=1e-12, gt=0, lt=1)
    slope_threshold: float = Field(default=0.05, gt=0)
    window: int = Field(default=10, ge=3)
    grid_resolution: float = Field(default=0.01, gt=0)
    ladder: List[float] = Field(default_factory=lambda: list(NRT_LADDER))
    morozov_factor: Optional[float] = Field(default=None, ge=1.0)
    variant: bool = False

    @field_validator('ladder')
    @classmethod
    def validate_ladder(cls, v):
        """The truncation ladder must decrease strictly inside (0, 1)"""
        if len(v) < 3:
            raise ValueError('ladder needs at least 3 levels')
        if any(t <= 0 or t >= 1 for t in v) or any(b >= a for a, b in zip(v, v[1:])):
            raise ValueError('ladder must be strictly decreasing within (0, 1)')
        return v

    def to_options(self, schedule: ScheduleSpec) -> IndicatorOptions:
        return IndicatorOptions(
            schedule=schedule.to_schedule(),
            slope_threshold=self.slope_threshold,
            window=self.window,
            truncation=self.truncation,
            ladder=tuple(self.ladder),
            morozov_factor=self.morozov_factor,
            variant=self.variant,
        )


class SweepSpec(BaseModel):
    """Test-domain family, in user coordinates"""
    family: Literal["disks", "polygons"] = "disks"
    center_spacing: float = Field(default=0.1, gt=0)
    center_extent: float = Field(default=0.0, ge=0)
    center_origin: Point = (0.0, 0.0)
    radii: List[float] = Field(default_factory=list)
    nodes: int = Field(default=64, ge=8)
    template: Optional[List[Point]] = Field(default=None, validate_default=True)
    scales: List[float] = Field(default_factory=lambda: [1.0])
    nodes_per_edge: int = Field(default=16, ge=4)
    grading: float = Field(default=3.0, ge=1.0)
    clearance: float = Field(default=0.02, ge=0)
    margin_exclusion: Optional[float] = Field(default=None, ge=0)
    d0: Optional[CurveSpec] = None

    @field_validator('radii', 'scales')
    @classmethod
    def validate_positive(cls, v, info):
        if any(x <= 0 for x in v):
            raise ValueError(f'{info.field_name} must be positive')
        return v

    @field_validator('template')
    @classmethod
    def validate_template(cls, v, info):
        """Polygon sweeps need a template"""
        if info.data.get('family') == 'polygons' and (v is None or len(v) < 3):
            raise ValueError('polygon sweep requires a template with at least 3 vertices')
        return v

    def to_plan(self, frame: UnitDiskFrame, margin: float) -> SweepPlan:
        template = None
        if self.template is not None:
            template = tuple(map(tuple, frame.to_unit(self.template).tolist()))
        return SweepPlan(
            family=SweepFamily(self.family),
            center_spacing=frame.length_to_unit(self.center_spacing),
            center_extent=frame.length_to_unit(self.center_extent),
            center_origin=tuple(frame.to_unit(self.center_origin).tolist()),
            radii=tuple(frame.length_to_unit(r) for r in self.radii),
            nodes=self.nodes,
            template=template,
            scales=tuple(self.scales),
            nodes_per_edge=self.nodes_per_edge,
            grading=self.grading,
            clearance=frame.length_to_unit(self.clearance),
            margin_exclusion=margin,
        )


class TaylorPoint(BaseModel):
    z: Point
    rho: float = Field(gt=0)
    ell_max: int = Field(default=10, ge=1, le=12)


class DiagnosticsSpec(BaseModel):
    green_identity_trials: int = Field(default=5, ge=0)
    taylor: List[TaylorPoint] = Field(default_factory=list)


class ScenarioConfig(BaseModel):
    """Scenario file schema"""
    name: str = Field(default="scenario", min_length=1)
    omega: CurveSpec = Field(default_factory=lambda: CurveSpec(kind="circle", radius=1.0, nodes=256))
    obstacle: CurveSpec
    excitation: ExcitationSpec = Field(default_factory=ExcitationSpec)
    data_source: DataSourceSpec = Field(default_factory=DataSourceSpec)
    noise_level: float = Field(default=0.0, ge=0)
    method: Literal["rt", "nrt", "both"] = "both"
    sweep: SweepSpec = Field(default_factory=SweepSpec)
    schedule: ScheduleSpec = Field(default_factory=ScheduleSpec)
    indicators: IndicatorSettings = Field(default_factory=IndicatorSettings)
    outputs: List[OutputKind] = Field(default_factory=lambda: ["indicators_csv"])
    seed: int = 0
    diagnostics: DiagnosticsSpec = Field(default_factory=DiagnosticsSpec)

    @field_validator('name')
    @classmethod
    def validate_name(cls, v):
        if not v.strip():
            raise ValueError('name cannot be empty or whitespace')
        return v.strip()

    @field_validator('omega')
    @classmethod
    def validate_omega(cls, v):
        """Ω is a disk; it is mapped onto the unit disk for computation"""
        if v.kind != 'circle':
            raise ValueError('omega must be a circle')
        return v

    @field_validator('data_source')
    @classmethod
    def validate_oracle(cls, v, info):
        """The oracle only exists for concentric circles"""
        if v.kind != 'oracle':
            return v
        omega, obstacle = info.data.get('omega'), info.data.get('obstacle')
        if omega is None or obstacle is None:
            return v
        if obstacle.kind != 'circle' or not np.allclose(obstacle.center, omega.center):
            raise ValueError('oracle data_source requires concentric circles')
        return v

    @property
    def frame(self) -> UnitDiskFrame:
        return UnitDiskFrame(center=tuple(self.omega.center), radius=self.omega.radius)
