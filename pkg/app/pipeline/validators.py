"""Cross-field scenario checks that the schema cannot express."""

import logging
import math
from typing import List, Optional, Tuple

import numpy as np

from app.core.scenario import ScenarioConfig
from app.pipeline.engine import RunRecord, resolve_dt
from app.services.hydro import HydroTable

logger = logging.getLogger(__name__)

# Coarsest accepted step, in steps per shortest period
MIN_STEPS_PER_PERIOD = 8


class ScenarioValidator:
    """Validates a scenario against the experiment it is about to run."""

    def validate_scenario(self, scenario: ScenarioConfig, needs_controller: bool = True) -> Tuple[bool, List[str]]:
        """Validate timing and controller settings.

        Args:
            scenario: Schema-valid scenario.
            needs_controller: Whether the command closes the loop.

        Returns:
            Tuple of (is_valid, list_of_issues).
        """
        issues = []
        sim = scenario.simulation
        dt = resolve_dt(scenario)

        if dt > scenario.shortest_period / MIN_STEPS_PER_PERIOD:
            issues.append(
                f"simulation.dt: {dt:g} s resolves the shortest period with fewer than {MIN_STEPS_PER_PERIOD} steps"
            )
        if dt > sim.t_end:
            issues.append("simulation.dt: larger than t_end")

        controller = scenario.controller
        if needs_controller and controller is None:
            issues.append("controller: required for this command")

        if needs_controller and controller is not None:
            warmup = controller.warmup if controller.warmup is not None else 10.0 * scenario.reference_period
            if warmup >= sim.t_end:
                issues.append(f"controller.warmup: {warmup:g} s is not shorter than t_end {sim.t_end:g} s")
            if controller.bounds is not None:
                for i, (low, high) in enumerate(controller.bounds):
                    if low is not None and high is not None and low >= high:
                        issues.append(f"controller.bounds.{i}: lower bound not below upper bound")
            for name in controller.parameters:
                if name == "C" and scenario.pto.C == 0 and controller.scales is None:
                    issues.append("controller.scales: C starts at 0, give an explicit scale")

            span = sim.average_periods * scenario.schedule[-1].excitation.period
            if warmup + span > sim.t_end:
                issues.append(
                    f"simulation.t_end: {sim.t_end:g} s leaves no {sim.average_periods:g}-period window after warmup"
                )

        if scenario.initial_conditions is not None:
            if not scenario.initial_conditions:
                issues.append("initial_conditions: empty list")
            for i, start in enumerate(scenario.initial_conditions):
                if start.get("C", 0.0) < 0:
                    issues.append(f"initial_conditions.{i}.C: must be >= 0")

        is_valid = len(issues) == 0
        if not is_valid:
            logger.warning(f"Scenario {scenario.name} has {len(issues)} issue(s)")
        return is_valid, issues

    def validate_table(self, scenario: ScenarioConfig, table: Optional[HydroTable]) -> Tuple[bool, List[str]]:
        """Check that every sea in the schedule lies inside the hydro table.

        Returns:
            Tuple of (is_valid, list_of_issues).
        """
        issues = []
        if scenario.plant.kind != "point_absorber":
            return True, issues
        if table is None:
            return False, ["plant.hydro: no hydro table"]

        low, high = table.bounds
        for i, segment in enumerate(scenario.schedule):
            excitation = segment.excitation
            if excitation.kind == "irregular":
                w_low = excitation.band[0] * excitation.omega
                w_high = excitation.band[1] * excitation.omega
            else:
                w_low = w_high = excitation.omega
            if w_low < low or w_high > high:
                issues.append(
                    f"schedule.{i}.excitation: frequencies [{w_low:.4g}, {w_high:.4g}] rad/s "
                    f"outside hydro table [{low:.4g}, {high:.4g}]"
                )
        return len(issues) == 0, issues

    def validate_record(self, record: RunRecord, periods: float) -> Tuple[bool, List[str]]:
        """Check that a record is finite and long enough for trailing averages.

        Returns:
            Tuple of (is_valid, list_of_issues).
        """
        issues = []
        if not np.all(np.isfinite(record.data)):
            issues.append("record: contains non-finite samples")
        span = record.t[-1] - max(record.warmup, record.segments[-1].start)
        needed = periods * record.segments[-1].period
        if span + 1e-9 < needed:
            issues.append(f"record: {span:g} s after warmup, {needed:g} s needed")
        return len(issues) == 0, issues


def relative_error(value: float, target: float) -> float:
    """|value - target| / |target|, NaN for a zero target."""
    if target == 0:
        return math.nan
    return abs(value - target) / abs(target)
