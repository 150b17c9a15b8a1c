"""Brute-force reference-to-output maps P_bar(K, C) and their optimum."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import DivergenceError, InsufficientDataError
from app.core.scenario import ExcitationConfig, PtoConfig, ScenarioConfig
from app.pipeline.engine import run
from app.services.hydro import HydroTable, build_hydro_table, optimal_msd, optimal_pa

logger = logging.getLogger(__name__)

# Default horizon and averaging window in periods: (regular, irregular)
HORIZON_PERIODS = {"regular": 40.0, "irregular": 100.0}
AVERAGE_PERIODS = {"regular": 10.0, "irregular": 50.0}


def analytic_optimum(scenario: ScenarioConfig, table: Optional[HydroTable] = None, excitation: Optional[ExcitationConfig] = None) -> Tuple[float, float]:
    """Drag-free impedance-matched (K, C) for one excitation (default: first segment)."""
    excitation = excitation or scenario.schedule[0].excitation
    plant = scenario.plant
    if plant.kind == "msd":
        return optimal_msd(plant.m, plant.k, excitation.omega, plant.c)
    if table is None:
        table = build_hydro_table(plant)
    k_opt, c_opt = optimal_pa(table, plant.m, excitation.omega)
    return k_opt - plant.k, c_opt + plant.c


@dataclass
class MapSurface:
    """P_bar on a K x C grid; NaN marks cells that failed."""
    k_values: np.ndarray
    c_values: np.ndarray
    power: np.ndarray
    diagnostics: Dict[Tuple[int, int], str] = field(default_factory=dict)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.power.shape

    def argmax(self) -> Tuple[int, int]:
        """Index of the best finite cell; ties go to the cell nearest the grid centre.

        Raises:
            InsufficientDataError: If no cell is finite.
        """
        finite = np.isfinite(self.power)
        if not finite.any():
            raise InsufficientDataError("Map has no finite cell")
        best = np.max(self.power[finite])
        rows, cols = np.nonzero(finite & (self.power == best))
        ci, cj = (self.shape[0] - 1) / 2.0, (self.shape[1] - 1) / 2.0
        order = np.argsort((rows - ci) ** 2 + (cols - cj) ** 2, kind="stable")
        return int(rows[order[0]]), int(cols[order[0]])

    def argmax_point(self) -> Tuple[float, float, float]:
        i, j = self.argmax()
        return float(self.k_values[i]), float(self.c_values[j]), float(self.power[i, j])


@dataclass(frozen=True)
class MapOptimum:
    """Refined map optimum; ``status`` is ok, boundary or degenerate."""
    K: float
    C: float
    power: float
    status: str = "ok"


def grid_axes(scenario: ScenarioConfig, table: Optional[HydroTable] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Explicit grids, else points over +-span around the centre (analytic optimum by default)."""
    grid = scenario.map
    if grid.k_values is not None and grid.c_values is not None:
        return np.array(grid.k_values, dtype=float), np.array(grid.c_values, dtype=float)
    center = grid.center or analytic_optimum(scenario, table)
    k_axis = np.array(grid.k_values, dtype=float) if grid.k_values is not None else np.linspace(
        center[0] * (1.0 - grid.span), center[0] * (1.0 + grid.span), grid.k_points
    )
    c_axis = np.array(grid.c_values, dtype=float) if grid.c_values is not None else np.linspace(
        center[1] * (1.0 - grid.span), center[1] * (1.0 + grid.span), grid.c_points
    )
    return k_axis, c_axis


def map_window(scenario: ScenarioConfig) -> Tuple[float, float]:
    """(horizon s, averaging periods) for the map runs."""
    grid = scenario.map
    excitation = scenario.schedule[0].excitation
    kind = "irregular" if excitation.kind == "irregular" else "regular"
    horizon = grid.horizon or HORIZON_PERIODS[kind] * excitation.period
    periods = grid.average_periods or AVERAGE_PERIODS[kind]
    if periods * excitation.period > horizon:
        raise InsufficientDataError(
            f"Map horizon {horizon:g} s is shorter than the averaging window",
            {"horizon": horizon, "periods": periods},
        )
    return horizon, periods


def cell_scenario(scenario: ScenarioConfig, K: float, C: float, horizon: float) -> ScenarioConfig:
    """Controller-free copy on the first schedule segment with a fixed PTO."""
    return scenario.model_copy(update={
        "schedule": scenario.schedule[:1],
        "controller": None,
        "pto": PtoConfig(K=K, C=C, power_def=scenario.pto.power_def),
        "simulation": scenario.simulation.model_copy(update={"t_end": horizon}),
    })


def evaluate_cell(scenario: ScenarioConfig, table: Optional[HydroTable], index: Tuple[int, int], K: float, C: float, horizon: float, periods: float):
    """P_bar of one cell as (index, value, diagnostic); divergence yields NaN."""
    try:
        record = run(cell_scenario(scenario, K, C, horizon), table, controlled=False, decimation=1, run_id=f"cell{index}")
        return index, record.mean_power(periods), None
    except DivergenceError as e:
        return index, math.nan, f"K={K:g}, C={C:g}: {e.message}"


def sweep(
    scenario: ScenarioConfig,
    k_values: Optional[Sequence[float]] = None,
    c_values: Optional[Sequence[float]] = None,
    horizon: Optional[float] = None,
    workers: int = 1,
    table: Optional[HydroTable] = None,
) -> MapSurface:
    """Run one fixed-PTO simulation per (K, C) cell.

    Cells run in a process pool when ``workers > 1``; results are merged by
    cell index, so the surface does not depend on completion order. Irregular
    seas reuse the same seed in every cell.

    Args:
        scenario: Validated scenario (first schedule segment is used).
        k_values: K grid; default from the scenario map section.
        c_values: C grid; default from the scenario map section.
        horizon: Simulated time per cell (s).
        workers: Process count.
        table: Hydro table for a point absorber.

    Returns:
        MapSurface with P_bar per cell.
    """
    if scenario.plant.kind == "point_absorber" and table is None:
        table = build_hydro_table(scenario.plant)
    default_k, default_c = grid_axes(scenario, table)
    k_axis = np.asarray(k_values if k_values is not None else default_k, dtype=float)
    c_axis = np.asarray(c_values if c_values is not None else default_c, dtype=float)
    for name, axis in (("K", k_axis), ("C", c_axis)):
        if axis.size == 0 or np.any(np.diff(axis) <= 0):
            raise ValueError(f"{name} grid must be non-empty and strictly increasing")

    window_horizon, periods = map_window(scenario)
    horizon = horizon or window_horizon
    cells = [((i, j), float(k), float(c)) for i, k in enumerate(k_axis) for j, c in enumerate(c_axis)]
    logger.info(f"Sweeping {k_axis.size}x{c_axis.size} map, horizon {horizon:g} s, {workers} worker(s)")

    power = np.full((k_axis.size, c_axis.size), math.nan)
    diagnostics: Dict[Tuple[int, int], str] = {}
    results: List = []

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            futures = {}
            for index, k, c in cells:
                future = executor.submit(evaluate_cell, scenario, table, index, k, c, horizon, periods)
                futures[future] = index
            for future in as_completed(futures):
                results.append(future.result())
    else:
        for index, k, c in cells:
            results.append(evaluate_cell(scenario, table, index, k, c, horizon, periods))

    for (i, j), value, diagnostic in sorted(results, key=lambda item: item[0]):
        power[i, j] = value
        if diagnostic is not None:
            diagnostics[(i, j)] = diagnostic
            logger.warning(f"Map cell ({i}, {j}) diverged: {diagnostic}")

    surface = MapSurface(k_axis, c_axis, power, diagnostics)
    k_best, c_best, p_best = surface.argmax_point()
    logger.info(f"Map argmax K={k_best:g}, C={c_best:g}, P={p_best:.6g} W")
    return surface


def refine(surface: MapSurface) -> MapOptimum:
    """Sub-cell optimum from a quadratic fit on the 3x3 neighbourhood of the argmax.

    Falls back to the argmax cell with a warning when the argmax sits on the
    grid boundary or the fitted curvature is not negative definite.
    """
    i, j = surface.argmax()
    k_axis, c_axis = surface.k_values, surface.c_values
    cell = MapOptimum(float(k_axis[i]), float(c_axis[j]), float(surface.power[i, j]))

    nk, nc = surface.shape
    if i in (0, nk - 1) or j in (0, nc - 1):
        logger.warning(f"Map argmax ({i}, {j}) lies on the grid boundary; returning the cell centre")
        return MapOptimum(cell.K, cell.C, cell.power, "boundary")

    block = surface.power[i - 1:i + 2, j - 1:j + 2]
    if not np.all(np.isfinite(block)):
        logger.warning("Map neighbourhood has missing cells; returning the cell centre")
        return MapOptimum(cell.K, cell.C, cell.power, "degenerate")

    hk = (k_axis[i + 1] - k_axis[i - 1]) / 2.0
    hc = (c_axis[j + 1] - c_axis[j - 1]) / 2.0
    u, v = np.meshgrid((k_axis[i - 1:i + 2] - k_axis[i]) / hk, (c_axis[j - 1:j + 2] - c_axis[j]) / hc, indexing="ij")
    u, v, z = u.ravel(), v.ravel(), block.ravel()
    design = np.column_stack([np.ones_like(u), u, v, u * u, u * v, v * v])
    (a, bu, bv, cuu, cuv, cvv), *_ = np.linalg.lstsq(design, z, rcond=None)

    hessian = np.array([[2.0 * cuu, cuv], [cuv, 2.0 * cvv]])
    tol = 1e-9 * max(float(np.max(np.abs(z))), np.finfo(float).tiny)
    if not (hessian[0, 0] < -tol and hessian[1, 1] < -tol and np.linalg.det(hessian) > tol * tol):
        logger.warning("Map curvature is not negative definite; returning the cell centre")
        return MapOptimum(cell.K, cell.C, cell.power, "degenerate")

    du, dv = np.linalg.solve(hessian, -np.array([bu, bv]))
    if abs(du) > 1.0 or abs(dv) > 1.0:
        logger.warning(f"Quadratic vertex ({du:.3g}, {dv:.3g}) leaves the neighbourhood; clipping")
        du, dv = float(np.clip(du, -1.0, 1.0)), float(np.clip(dv, -1.0, 1.0))
    peak = a + bu * du + bv * dv + cuu * du * du + cuv * du * dv + cvv * dv * dv
    return MapOptimum(float(k_axis[i] + du * hk), float(c_axis[j] + dv * hc), float(peak))
