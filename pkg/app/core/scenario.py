"""Scenario schema: the YAML documents that describe one experiment.

Every numeric constant the physics leaves open (hyper-parameters, dt, grids,
drag coefficient, seeds) is a field here. Defaults that depend on the wave
period are left as ``None`` and resolved by the module that consumes them.
"""

import math
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.core.exceptions import ConfigurationError

Channel = Literal["K", "C"]
PerChannel = Union[float, List[float]]


def per_channel(value: Optional[PerChannel], count: int, name: str) -> Optional[List[float]]:
    """Broadcast a scalar to one value per channel and check list lengths.

    Raises:
        ValueError: If a list does not have one entry per channel.
    """
    if value is None:
        return None
    if isinstance(value, (int, float)):
        return [float(value)] * count
    if len(value) != count:
        raise ValueError(f"{name} needs {count} value(s), got {len(value)}")
    return [float(v) for v in value]


class StrictModel(BaseModel):
    """Base for scenario sections: unknown keys are errors."""
    model_config = ConfigDict(extra="forbid")


class AnchorConfig(StrictModel):
    """One hydrodynamic anchor point (omega, A, B)."""
    period: Optional[float] = Field(default=None, gt=0)
    omega: Optional[float] = Field(default=None, gt=0)
    added_mass: Optional[float] = None
    k_opt: Optional[float] = None
    damping: float

    @model_validator(mode="after")
    def _one_of_each(self):
        if (self.period is None) == (self.omega is None):
            raise ValueError("give exactly one of period / omega")
        if (self.added_mass is None) == (self.k_opt is None):
            raise ValueError("give exactly one of added_mass / k_opt")
        return self

    @property
    def frequency(self) -> float:
        return self.omega if self.omega is not None else 2.0 * math.pi / self.period

    def added_mass_for(self, body_mass: float) -> float:
        """Added mass, inverting K_opt = omega^2 (m + A) when given as k_opt."""
        if self.added_mass is not None:
            return self.added_mass
        return self.k_opt / self.frequency ** 2 - body_mass


class HydroConfig(StrictModel):
    """Where the hydrodynamic table comes from: a text file or anchors."""
    file: Optional[str] = None
    anchors: List[AnchorConfig] = Field(default_factory=list)
    max_order: int = Field(default=8, ge=0, le=8)
    omega_min: Optional[float] = Field(default=None, gt=0)
    omega_max: Optional[float] = Field(default=None, gt=0)
    grid_points: int = Field(default=400, ge=8)

    @model_validator(mode="after")
    def _source(self):
        if (self.file is None) == (not self.anchors):
            raise ValueError("give exactly one of file / anchors")
        if self.max_order % 2:
            raise ValueError("max_order must be even (second-order sections)")
        return self


class PlantConfig(StrictModel):
    """Mass-spring-damper or submerged point absorber."""
    kind: Literal["msd", "point_absorber"] = "msd"
    m: float = Field(gt=0)
    c: float = Field(default=0.0, ge=0)
    k: float = Field(default=0.0, ge=0)
    geometry: Literal["cylinder", "sphere"] = "cylinder"
    diameter: float = Field(default=0.16, gt=0)
    submergence: float = Field(default=0.25, gt=0)
    depth: float = Field(default=0.65, gt=0)
    drag_coefficient: Optional[float] = Field(default=None, ge=0)
    rho_w: float = Field(default=1025.0, gt=0)
    hydro: Optional[HydroConfig] = None

    @model_validator(mode="after")
    def _point_absorber_fields(self):
        if self.kind == "point_absorber":
            if self.drag_coefficient is None:
                raise ValueError("drag_coefficient is required for a point_absorber plant")
            if self.hydro is None:
                raise ValueError("hydro is required for a point_absorber plant")
            if self.submergence >= self.depth:
                raise ValueError("submergence must be smaller than depth")
        return self

    @property
    def frontal_area(self) -> float:
        """Drag reference S_x: m per unit length (cylinder) or m^2 (sphere)."""
        if self.geometry == "cylinder":
            return self.diameter
        return math.pi * self.diameter ** 2 / 4.0


class ExcitationConfig(StrictModel):
    """Harmonic force (MSD) or a regular / JONSWAP sea (point absorber)."""
    kind: Literal["harmonic", "regular", "irregular"]
    period: float = Field(gt=0)
    amplitude: Optional[float] = Field(default=None, ge=0)
    height: Optional[float] = Field(default=None, ge=0)
    seed: Optional[int] = Field(default=None, ge=0)
    n_components: int = Field(default=200, ge=1)
    band: Tuple[float, float] = (0.4, 4.0)
    gamma: float = Field(default=3.3, ge=1.0)

    @model_validator(mode="after")
    def _required(self):
        if self.kind == "harmonic" and self.amplitude is None:
            raise ValueError("harmonic excitation needs amplitude")
        if self.kind != "harmonic" and self.height is None:
            raise ValueError(f"{self.kind} sea needs height")
        if not 0 < self.band[0] < self.band[1]:
            raise ValueError("band must be (low, high) with 0 < low < high")
        return self

    @property
    def omega(self) -> float:
        return 2.0 * math.pi / self.period


class ScheduleSegment(StrictModel):
    """Excitation active from ``start`` until the next segment starts."""
    start: float = Field(default=0.0, ge=0)
    label: Optional[str] = None
    excitation: ExcitationConfig


class PtoConfig(StrictModel):
    """Initial (or fixed) PTO coefficients."""
    K: float = 0.0
    C: float = Field(default=0.0, ge=0)
    power_def: Literal["resistive", "total"] = "resistive"


class PipelineConfig(StrictModel):
    """Performance-function chain: LPF, moving average, log."""
    periods: float = Field(default=2.0, gt=0)
    cutoff: Optional[float] = Field(default=None, ge=0)
    log_floor: float = Field(default=1e-12, gt=0)


class ControllerConfig(StrictModel):
    """Extremum-seeking scheme and its hyper-parameters.

    Gains, dither amplitudes and drives act on normalized parameters
    (value / scale). Unset values are resolved against the wave period and the plant's
    envelope rate.
    """
    scheme: Literal["sliding_mode", "relay", "lsq", "self_driving", "perturbation"]
    parameters: List[Channel] = Field(min_length=1, max_length=2)
    scales: Optional[PerChannel] = None
    bounds: Optional[List[Tuple[Optional[float], Optional[float]]]] = None
    warmup: Optional[float] = Field(default=None, ge=0)

    gain: Optional[PerChannel] = None
    band: Optional[PerChannel] = None
    rate: Optional[PerChannel] = None
    expected_span: float = Field(default=1.0, gt=0)
    # Expected |d2J/dtheta2| at the optimum, normalized units; sizes default gains
    curvature: PerChannel = 100.0
    q_init: Optional[float] = None

    dither_amplitude: PerChannel = 0.01
    dither_frequency: Optional[PerChannel] = None
    drive: Optional[PerChannel] = None
    buffer_periods: Optional[float] = Field(default=None, gt=0)

    highpass: Optional[float] = Field(default=None, gt=0)
    lowpass: Optional[float] = Field(default=None, gt=0)

    observer_rate: Optional[float] = Field(default=None, gt=0)
    optimizer_gain: Optional[float] = Field(default=None, gt=0)
    regularizer: float = Field(default=1e-11, ge=0)
    m2_init: float = 1.0
    q1_init: float = 1.0
    q2_init: float = Field(default=1.0, gt=0)
    q2_max: float = Field(default=1e12, gt=0)

    @field_validator("parameters")
    @classmethod
    def _unique(cls, value):
        if len(set(value)) != len(value):
            raise ValueError("parameters must be unique")
        return value

    @model_validator(mode="after")
    def _shapes(self):
        n = len(self.parameters)
        if self.scheme == "self_driving":
            if n != 1:
                raise ValueError("self_driving extremum seeking is scalar-only; give one parameter")
            if self.m2_init == 0.0 or self.q1_init == 0.0:
                raise ValueError("self_driving needs m2_init != 0 and q1_init != 0, otherwise the parameter never moves")
        for name in ("scales", "gain", "band", "rate", "dither_amplitude", "dither_frequency", "drive", "curvature"):
            values = per_channel(getattr(self, name), n, name)
            if values is not None and any(v <= 0 for v in values):
                raise ValueError(f"{name} must be positive")
        if self.bounds is not None and len(self.bounds) != n:
            raise ValueError(f"bounds needs {n} entries")
        return self

    def channel_values(self, name: str) -> Optional[List[float]]:
        return per_channel(getattr(self, name), len(self.parameters), name)


class SimulationConfig(StrictModel):
    """Integrator, horizon and recording settings."""
    t_end: float = Field(gt=0)
    dt: Optional[float] = Field(default=None, gt=0)
    steps_per_period: int = Field(default=200, ge=8)
    decimation: int = Field(default=10, ge=1)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)
    average_periods: float = Field(default=2.0, gt=0)
    rate_guard: float = Field(default=0.01, gt=0)


class MapConfig(StrictModel):
    """Brute-force (K, C) grid."""
    k_values: Optional[List[float]] = None
    c_values: Optional[List[float]] = None
    k_points: int = Field(default=41, ge=1)
    c_points: int = Field(default=31, ge=1)
    span: float = Field(default=0.6, gt=0, lt=1)
    center: Optional[Tuple[float, float]] = None
    horizon: Optional[float] = Field(default=None, gt=0)
    average_periods: Optional[float] = Field(default=None, gt=0)

    @field_validator("k_values", "c_values")
    @classmethod
    def _increasing(cls, value):
        if value is not None:
            if not value:
                raise ValueError("grid must not be empty")
            if any(b <= a for a, b in zip(value, value[1:])):
                raise ValueError("grid must be strictly increasing")
        return value


class ScenarioConfig(StrictModel):
    """A complete experiment description."""
    name: str = "scenario"
    plant: PlantConfig
    schedule: List[ScheduleSegment] = Field(min_length=1)
    pto: PtoConfig = Field(default_factory=PtoConfig)
    pipeline: PipelineConfig = Field(default_factory=PipelineConfig)
    controller: Optional[ControllerConfig] = None
    simulation: SimulationConfig
    map: MapConfig = Field(default_factory=MapConfig)
    initial_conditions: Optional[List[Dict[Channel, float]]] = None
    targets: Optional[Dict[Channel, float]] = None

    @model_validator(mode="after")
    def _schedule(self):
        starts = [segment.start for segment in self.schedule]
        if starts[0] != 0.0:
            raise ValueError("schedule must start at t = 0")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("schedule start times must be strictly increasing")
        if starts[-1] >= self.simulation.t_end:
            raise ValueError("last schedule segment starts after t_end")
        for segment in self.schedule:
            harmonic = segment.excitation.kind == "harmonic"
            if harmonic != (self.plant.kind == "msd"):
                raise ValueError(f"{segment.excitation.kind} excitation does not fit a {self.plant.kind} plant")
        return self

    @property
    def reference_period(self) -> float:
        """Wave period of the first schedule segment."""
        return self.schedule[0].excitation.period

    @property
    def longest_period(self) -> float:
        return max(segment.excitation.period for segment in self.schedule)

    @property
    def shortest_period(self) -> float:
        return min(segment.excitation.period for segment in self.schedule)


def format_validation_error(error: ValidationError) -> str:
    """Render pydantic errors as ``dotted.key: message`` lines."""
    lines = []
    for item in error.errors():
        key = ".".join(str(part) for part in item["loc"]) or "<root>"
        message = item["msg"].removeprefix("Value error, ")
        lines.append(f"{key}: {message}")
    return "; ".join(lines)


def parse_scenario(data: dict, base_dir: Optional[Path] = None) -> ScenarioConfig:
    """Validate a scenario mapping.

    Args:
        data: Parsed YAML mapping.
        base_dir: Directory that relative hydro file paths are resolved against.

    Returns:
        Validated scenario.

    Raises:
        ConfigurationError: Naming the first offending key.
    """
    if not isinstance(data, dict):
        raise ConfigurationError("scenario must be a mapping at top level")
    try:
        scenario = ScenarioConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        key = ".".join(str(part) for part in first["loc"]) or None
        raise ConfigurationError(format_validation_error(e), key=key)

    hydro = scenario.plant.hydro
    if hydro is not None and hydro.file is not None and base_dir is not None:
        path = Path(hydro.file)
        if not path.is_absolute():
            hydro.file = str((base_dir / path).resolve())
    return scenario


def load_scenario(config_path: Union[str, Path]) -> ScenarioConfig:
    """Load and validate a scenario YAML file.

    Args:
        config_path: Path to the scenario file.

    Returns:
        Validated scenario.

    Raises:
        ConfigurationError: If the file is unreadable or invalid.
    """
    path = Path(config_path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigurationError(f"Cannot read scenario {path}: {e}")
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Scenario {path} is not valid YAML: {e}")
    return parse_scenario(data, base_dir=path.parent)
