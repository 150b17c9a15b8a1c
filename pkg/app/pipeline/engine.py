"""Fixed-step closed-loop simulation engine.

Each step advances the plant by classical RK4 with the PTO coefficients held,
computes the instantaneous power, pushes it through the performance pipeline
and lets the controller update the coefficients for the next step.
"""

import bisect
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from app.core.exceptions import DivergenceError, InsufficientDataError
from app.core.logger import WarningLimiter
from app.core.scenario import ExcitationConfig, ScenarioConfig
from app.services.controllers import ExtremumSeeker, build_controller
from app.services.hydro import HydroTable, build_hydro_table
from app.services.plants import (
    MsdPlant,
    PaPlant,
    PtoLaw,
    envelope_rate,
    natural_frequency,
    pto_power,
    restoring_stiffness,
)
from app.services.signals import PerfPipeline
from app.services.waves import HarmonicForce, SeaState, WaveExcitation

logger = logging.getLogger(__name__)

COLUMNS = ("t", "x", "xdot", "K", "C", "P", "mu", "J")

# Default K floor sits this many K scales above the negative restoring stiffness
STIFFNESS_MARGIN = 0.01


def rk4_step(deriv: Callable[[float, np.ndarray], np.ndarray], t: float, state: np.ndarray, dt: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step."""
    k1 = deriv(t, state)
    k2 = deriv(t + 0.5 * dt, state + 0.5 * dt * k1)
    k3 = deriv(t + 0.5 * dt, state + 0.5 * dt * k2)
    k4 = deriv(t + dt, state + dt * k3)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass(frozen=True)
class Segment:
    """One schedule entry with its resolved end time."""
    index: int
    start: float
    end: float
    label: str
    period: float


class ExcitationSchedule:
    """Time-ordered excitation sources; the segment is picked at step start."""

    def __init__(self, scenario: ScenarioConfig, table: Optional[HydroTable] = None):
        """Build one force source per schedule segment.

        Irregular segments without an explicit seed use
        ``simulation.seed + segment index``.

        Raises:
            HydroRangeError: If a sea component falls outside the hydro table.
        """
        self.starts: List[float] = []
        self.sources = []
        self.seas: List[Optional[SeaState]] = []
        self.segments: List[Segment] = []
        t_end = scenario.simulation.t_end
        schedule = scenario.schedule

        for i, entry in enumerate(schedule):
            end = schedule[i + 1].start if i + 1 < len(schedule) else t_end
            label = entry.label or f"segment_{i + 1}"
            source, sea = self._source(entry.excitation, scenario, table, i)
            self.starts.append(entry.start)
            self.sources.append(source)
            self.seas.append(sea)
            self.segments.append(Segment(i, entry.start, end, label, entry.excitation.period))

    @staticmethod
    def _source(excitation: ExcitationConfig, scenario: ScenarioConfig, table: Optional[HydroTable], index: int):
        if excitation.kind == "harmonic":
            return HarmonicForce(excitation.amplitude, excitation.omega), None
        depth = scenario.plant.depth
        if excitation.kind == "regular":
            sea = SeaState.regular(excitation.period, excitation.height, depth)
        else:
            seed = excitation.seed if excitation.seed is not None else scenario.simulation.seed + index
            sea = SeaState.irregular(
                excitation.period,
                excitation.height,
                depth,
                seed=seed,
                n_components=excitation.n_components,
                band=excitation.band,
                gamma=excitation.gamma,
            )
        return WaveExcitation(sea, table), sea

    def index_at(self, t: float) -> int:
        return bisect.bisect_right(self.starts, t) - 1

    def source_at(self, t: float):
        return self.sources[self.index_at(t)]


def build_plant(scenario: ScenarioConfig, table: Optional[HydroTable] = None):
    """Plant instance for the scenario.

    A hydro table without radiation states gives the constant-coefficient
    point absorber, frozen at the first segment's frequency.
    """
    plant_config = scenario.plant
    first = scenario.schedule[0].excitation
    if plant_config.kind == "msd":
        return MsdPlant(plant_config.m, plant_config.c, plant_config.k, first.amplitude or 0.0, first.omega)

    if table is None:
        table = build_hydro_table(plant_config)
    common = dict(
        drag_coefficient=plant_config.drag_coefficient,
        frontal_area=plant_config.frontal_area,
        rho_w=plant_config.rho_w,
        stiffness=plant_config.k,
    )
    radiation = table.radiation
    if radiation.order == 0:
        added_mass, damping, _ = table.interp(first.omega)
        return PaPlant(plant_config.m, added_mass, damping=damping + plant_config.c, **common)
    return PaPlant(plant_config.m, table.a_inf, radiation.ar, radiation.br, radiation.cr, damping=plant_config.c, **common)


@dataclass
class RunRecord:
    """Decimated time series of one run plus its bookkeeping."""
    data: np.ndarray
    segments: List[Segment]
    warmup: float = 0.0
    dt: float = 0.0
    scheme: Optional[str] = None
    parameters: List[str] = field(default_factory=list)
    controller: Dict = field(default_factory=dict)
    warnings: Dict[str, int] = field(default_factory=dict)
    elapsed: float = 0.0

    def column(self, name: str) -> np.ndarray:
        return self.data[:, COLUMNS.index(name)]

    @property
    def t(self) -> np.ndarray:
        return self.column("t")

    @property
    def sample_interval(self) -> float:
        """Spacing of the recorded samples (s)."""
        t = self.t
        return float(t[1] - t[0]) if t.size > 1 else self.dt

    def window(self, periods: float, segment: Optional[Segment] = None) -> slice:
        """Rows of the trailing ``periods`` wave periods of ``segment``.

        The window is a whole number of samples, ending at the last sample
        of the segment (of the run when ``segment`` is None).

        Raises:
            InsufficientDataError: If the window reaches back before warmup
                or the segment start.
        """
        if segment is None:
            segment = self.segments[-1]
            end_time = self.t[-1]
        else:
            end_time = segment.end
        t = self.t
        stop = int(np.searchsorted(t, end_time, side="right"))
        count = int(round(periods * segment.period / self.sample_interval))
        begin = stop - count
        floor = max(self.warmup, segment.start)
        if count < 1 or begin < 0 or t[begin] < floor - 1e-9 * max(1.0, floor):
            raise InsufficientDataError(
                f"Record holds less than {periods:g} periods after t={floor:g} s in {segment.label}",
                {"periods": periods, "segment": segment.label},
            )
        return slice(begin, stop)

    def mean_power(self, periods: float, segment: Optional[Segment] = None) -> float:
        """P_bar = mean of C xdot^2 over the trailing window."""
        rows = self.data[self.window(periods, segment)]
        c = rows[:, COLUMNS.index("C")]
        xdot = rows[:, COLUMNS.index("xdot")]
        return float(np.mean(c * xdot * xdot))

    def time_avg_params(self, periods: float, segment: Optional[Segment] = None) -> Tuple[float, float]:
        rows = self.data[self.window(periods, segment)]
        return float(np.mean(rows[:, COLUMNS.index("K")])), float(np.mean(rows[:, COLUMNS.index("C")]))

    def segment_averages(self, periods: float) -> List[Dict]:
        """Trailing (K_bar, C_bar, P_bar) per schedule segment; NaN when too short."""
        out = []
        for segment in self.segments:
            entry = {"label": segment.label, "start": segment.start, "end": segment.end, "period": segment.period}
            try:
                k_bar, c_bar = self.time_avg_params(periods, segment)
                entry.update(K=k_bar, C=c_bar, P=self.mean_power(periods, segment))
            except InsufficientDataError as e:
                logger.warning(e.message)
                entry.update(K=math.nan, C=math.nan, P=math.nan)
            out.append(entry)
        return out


def time_avg_params(record: RunRecord, periods: float) -> Tuple[float, float]:
    """(K_bar, C_bar) over the trailing ``periods`` wave periods."""
    return record.time_avg_params(periods)


def mean_power(record: RunRecord, periods: float) -> float:
    """Mean resistive power over the trailing ``periods`` wave periods."""
    return record.mean_power(periods)


def resolve_dt(scenario: ScenarioConfig) -> float:
    """Configured dt, else the shortest period over ``steps_per_period``."""
    sim = scenario.simulation
    if sim.dt is not None:
        return sim.dt
    return scenario.shortest_period / sim.steps_per_period


def resolve_bounds(
    parameters: List[str],
    configured: Optional[List[Tuple[Optional[float], Optional[float]]]],
    plant,
    scales: np.ndarray,
) -> List[Tuple[float, float]]:
    """Physical (low, high) per tuned parameter.

    Unset lower bounds keep the plant stable: K stays above the negative
    restoring stiffness by ``STIFFNESS_MARGIN`` scales and C stays >= 0.
    """
    configured = configured or [(None, None)] * len(parameters)
    bounds = []
    for name, scale, (low, high) in zip(parameters, scales, configured):
        if name == "K":
            floor = -restoring_stiffness(plant) + STIFFNESS_MARGIN * float(scale)
            low = floor if low is None else low
        else:
            low = 0.0 if low is None else max(low, 0.0)
        bounds.append((low, math.inf if high is None else high))
    return bounds


class _PtoActuator:
    """Maps normalized controller output onto the PTO law."""

    def __init__(self, pto: PtoLaw, parameters: List[str], scales: np.ndarray, bounds, warnings: WarningLimiter):
        self.pto = pto
        self.parameters = parameters
        self.scales = scales
        self.bounds = bounds
        self.warnings = warnings

    def apply(self, theta: np.ndarray) -> np.ndarray:
        values = self.scales * theta
        for i, name in enumerate(self.parameters):
            low, high = self.bounds[i]
            value = float(values[i])
            if name == "C" and value < 0.0:
                self.warnings.warn("c_clamp", f"Applied C={value:.4g} clamped at 0")
            value = min(max(value, low), high)
            setattr(self.pto, name, value)
            values[i] = value
        return values


def run(
    scenario: ScenarioConfig,
    table: Optional[HydroTable] = None,
    controlled: bool = True,
    decimation: Optional[int] = None,
    run_id: Optional[str] = None,
) -> RunRecord:
    """Simulate one scenario.

    Args:
        scenario: Validated scenario.
        table: Hydro table for a point absorber; built from the scenario if None.
        controlled: False runs with the fixed PTO even if a controller is configured.
        decimation: Record every n-th step; defaults to the scenario value.
        run_id: Label used in log lines.

    Returns:
        RunRecord with the decimated series.

    Raises:
        DivergenceError: If the state becomes non-finite.
        ConfigurationError: On inconsistent controller settings.
    """
    started = time.time()
    tag = run_id or scenario.name
    sim = scenario.simulation
    dt = resolve_dt(scenario)
    n_steps = int(round(sim.t_end / dt))
    every = decimation or sim.decimation

    if scenario.plant.kind == "point_absorber" and table is None:
        table = build_hydro_table(scenario.plant)
    plant = build_plant(scenario, table)
    schedule = ExcitationSchedule(scenario, table)
    pipeline = PerfPipeline.for_period(
        scenario.longest_period,
        dt,
        periods=scenario.pipeline.periods,
        cutoff=scenario.pipeline.cutoff,
        log_floor=scenario.pipeline.log_floor,
    )
    pto = PtoLaw(scenario.pto.K, scenario.pto.C, scenario.pto.power_def)
    warnings = WarningLimiter(logger)

    controller: Optional[ExtremumSeeker] = None
    actuator = None
    omega_ref = 2.0 * math.pi / scenario.reference_period
    control = scenario.controller if controlled else None
    if control is not None:
        theta0 = [getattr(pto, name) for name in control.parameters]
        controller, scales = build_controller(control, theta0, omega_ref, dt, envelope_rate(plant, pto, omega_ref))
        bounds = resolve_bounds(control.parameters, control.bounds, plant, scales)
        low, high = np.array(bounds).T
        controller.constrain(low / scales, high / scales)
        actuator = _PtoActuator(pto, control.parameters, scales, bounds, warnings)
        applied = actuator.apply(controller.theta)
        guard = sim.rate_guard * scales * (natural_frequency(plant, pto) or omega_ref)

    logger.info(
        f"[{tag}] Running {scenario.plant.kind} for {sim.t_end:g} s: dt={dt:.4g} s, "
        f"{n_steps} steps, scheme={controller.scheme if controller else 'none'}"
    )

    data = np.empty((n_steps // every + 1, len(COLUMNS)))
    state = plant.initial_state()
    data[0] = (0.0, state[0], state[1], pto.K, pto.C, pto_power(pto, state[0], state[1]), pipeline.mu, pipeline.value)
    row = 1

    for i in range(n_steps):
        t = i * dt
        source = schedule.source_at(t)

        def deriv(tt, s):
            return plant.derivative(s, pto, source.force(tt))

        new_state = rk4_step(deriv, t, state, dt)
        t_new = (i + 1) * dt
        if not np.all(np.isfinite(new_state)):
            raise DivergenceError(
                f"State diverged at t={t_new:.6g} s (last finite x={state[0]:.6g}, xdot={state[1]:.6g})",
                t=t_new,
                state=state,
            )
        state = new_state
        power = pto_power(pto, state[0], state[1])
        if not math.isfinite(power):
            raise DivergenceError(f"Power overflowed at t={t_new:.6g} s", t=t_new, state=state)
        J = pipeline.step(power, dt)

        if (i + 1) % every == 0:
            data[row] = (t_new, state[0], state[1], pto.K, pto.C, power, pipeline.mu, J)
            row += 1

        if controller is not None:
            metric = pipeline.mu if controller.metric == "mu" else J
            theta = controller.step(metric, t_new, dt)
            previous = applied
            applied = actuator.apply(theta)
            if np.any(np.abs(applied - previous) > guard * dt):
                warnings.warn("rate_guard", f"[{tag}] Parameter rate exceeds quasi-static guard at t={t_new:.4g} s")

    record = RunRecord(
        data=data[:row],
        segments=schedule.segments,
        warmup=controller.warmup if controller else 0.0,
        dt=dt,
        scheme=controller.scheme if controller else None,
        parameters=list(control.parameters) if control else [],
        controller=controller.describe() if controller else {},
        warnings={**warnings.counts, **(controller.warnings.counts if controller else {})},
        elapsed=time.time() - started,
    )
    logger.info(f"[{tag}] Run finished in {record.elapsed:.1f}s")
    return record
