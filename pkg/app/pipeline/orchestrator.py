"""Experiment orchestrator behind the CLI commands."""

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from app.core.config import Config, get_config
from app.core.exceptions import ConfigurationError, EscError, ExperimentError
from app.core.logger import log_with_context
from app.core.scenario import ScenarioConfig, load_scenario
from app.pipeline.engine import ExcitationSchedule, RunRecord, run
from app.pipeline.mapgen import analytic_optimum, refine, sweep
from app.pipeline.validators import ScenarioValidator, relative_error
from app.services.hydro import HydroTable, build_hydro_table, write_hydro_table
from app.utils.artifacts import ArtifactWriter, generate_run_id
from app.utils import plots

logger = logging.getLogger(__name__)


def apply_seed(scenario: ScenarioConfig, seed: Optional[int]) -> ScenarioConfig:
    """Override the phase seed; per-segment seeds are dropped so the override applies."""
    if seed is None:
        return scenario
    schedule = [
        segment.model_copy(update={"excitation": segment.excitation.model_copy(update={"seed": None})})
        for segment in scenario.schedule
    ]
    simulation = scenario.simulation.model_copy(update={"seed": seed})
    return scenario.model_copy(update={"schedule": schedule, "simulation": simulation})


def with_start(scenario: ScenarioConfig, start: Dict[str, float]) -> ScenarioConfig:
    """Copy of ``scenario`` whose PTO starts at ``start`` (keys K and/or C)."""
    return scenario.model_copy(update={"pto": scenario.pto.model_copy(update=dict(start))})


def _run_member(scenario: ScenarioConfig, table: Optional[HydroTable], run_id: str) -> RunRecord:
    return run(scenario, table, run_id=run_id)


class ExperimentOrchestrator:
    """Runs one experiment command and writes its artifacts."""

    def __init__(
        self,
        config: Optional[Config] = None,
        out_dir: Optional[str] = None,
        svg: Optional[bool] = None,
        workers: Optional[int] = None,
        seed: Optional[int] = None,
    ):
        """Initialize orchestrator.

        Args:
            config: Application configuration.
            out_dir: Artifact directory; default ``<output.base_dir>/<run_id>``.
            svg: Emit SVG figures; default from config.
            workers: Worker processes for map and appendix fan-out.
            seed: Phase seed override for irregular seas.
        """
        self.config = config or get_config()
        self.run_id = generate_run_id()
        self.out_dir = Path(out_dir) if out_dir else Path(self.config.output.base_dir) / self.run_id
        self.svg = self.config.output.svg if svg is None else svg
        self.workers = workers or self.config.execution.workers
        self.seed = seed
        self.validator = ScenarioValidator()
        self._writer: Optional[ArtifactWriter] = None

    @property
    def writer(self) -> ArtifactWriter:
        if self._writer is None:
            self._writer = ArtifactWriter(self.out_dir, self.config.output.float_format)
        return self._writer

    def execute(self, command: str, config_path: str) -> Dict[str, Any]:
        """Load a scenario and run ``command`` on it.

        Args:
            command: simulate, map, adaptive, appendix or fixture.
            config_path: Scenario YAML path.

        Returns:
            Dictionary with result values and artifact paths.

        Raises:
            ExperimentError: If any step fails; ``cause`` holds the original error.
        """
        handlers = {
            "simulate": self.simulate,
            "adaptive": self.adaptive,
            "map": self.map,
            "appendix": self.appendix,
            "fixture": self.fixture,
        }
        start_time = time.time()
        logger.info(f"[{self.run_id}] Starting {command} with {config_path}")
        try:
            scenario = self._step_load(config_path)
            result = handlers[command](scenario)
        except ExperimentError:
            raise
        except Exception as e:
            raise ExperimentError(f"{command} failed: {str(e)}", step=command, run_id=self.run_id, cause=e)

        execution_time = time.time() - start_time
        log_with_context(
            logger, "info",
            f"[{self.run_id}] {command} completed in {execution_time:.1f}s, artifacts in {self.out_dir}",
            run_id=self.run_id, step=command, duration=round(execution_time, 3),
        )
        return {"run_id": self.run_id, "command": command, "out_dir": str(self.out_dir), **result}

    def _wrap(self, step: str, error: Exception) -> ExperimentError:
        if isinstance(error, ExperimentError):
            return error
        message = error.message if isinstance(error, EscError) else str(error)
        return ExperimentError(f"{step} failed: {message}", step=step, run_id=self.run_id, cause=error)

    def _step_load(self, config_path: str) -> ScenarioConfig:
        try:
            logger.info(f"[{self.run_id}] Step 1: Loading scenario...")
            scenario = apply_seed(load_scenario(config_path), self.seed)
            logger.info(f"[{self.run_id}] Scenario '{scenario.name}' loaded ({len(scenario.schedule)} segment(s))")
            return scenario
        except Exception as e:
            raise self._wrap("load", e)

    def _step_prepare(self, scenario: ScenarioConfig, needs_controller: bool) -> Optional[HydroTable]:
        try:
            logger.info(f"[{self.run_id}] Step 2: Validating scenario and hydrodynamics...")
            is_valid, issues = self.validator.validate_scenario(scenario, needs_controller)
            if not is_valid:
                first = issues[0].split(":")[0]
                raise ConfigurationError("; ".join(issues), key=first)

            table = build_hydro_table(scenario.plant) if scenario.plant.kind == "point_absorber" else None
            is_valid, issues = self.validator.validate_table(scenario, table)
            if not is_valid:
                raise ConfigurationError("; ".join(issues), key="schedule")
            return table
        except Exception as e:
            raise self._wrap("prepare", e)

    def _step_run(self, scenarios: List[Tuple[str, ScenarioConfig]], table: Optional[HydroTable]) -> Dict[str, RunRecord]:
        """Run named scenarios, fanned out to processes when workers > 1."""
        try:
            logger.info(f"[{self.run_id}] Step 3: Running {len(scenarios)} simulation(s)...")
            records: Dict[str, RunRecord] = {}
            workers = min(self.workers, len(scenarios))
            if workers > 1:
                with ProcessPoolExecutor(max_workers=workers) as executor:
                    futures = {}
                    for name, scenario in scenarios:
                        future = executor.submit(_run_member, scenario, table, f"{self.run_id}/{name}")
                        futures[future] = name
                    for future in as_completed(futures):
                        records[futures[future]] = future.result()
            else:
                for name, scenario in scenarios:
                    records[name] = run(scenario, table, run_id=f"{self.run_id}/{name}")
            return {name: records[name] for name, _ in scenarios}
        except Exception as e:
            raise self._wrap("run", e)

    def _targets(self, scenario: ScenarioConfig, table: Optional[HydroTable]) -> Dict[str, float]:
        if scenario.targets:
            return dict(scenario.targets)
        k_opt, c_opt = analytic_optimum(scenario, table, scenario.schedule[-1].excitation)
        return {"K": k_opt, "C": c_opt}

    def _record_entries(self, scenario: ScenarioConfig, record: RunRecord, table: Optional[HydroTable], prefix: str = "") -> List[Tuple[str, Any]]:
        periods = scenario.simulation.average_periods
        k_bar, c_bar = record.time_avg_params(periods)
        targets = self._targets(scenario, table)
        entries = [
            (f"{prefix}K_bar", k_bar),
            (f"{prefix}C_bar", c_bar),
            (f"{prefix}P_bar", record.mean_power(periods)),
            (f"{prefix}target_K", targets.get("K", math.nan)),
            (f"{prefix}target_C", targets.get("C", math.nan)),
            (f"{prefix}rel_err_K", relative_error(k_bar, targets.get("K", 0.0))),
            (f"{prefix}rel_err_C", relative_error(c_bar, targets.get("C", 0.0))),
        ]
        for segment, stats in zip(scenario.schedule, record.segment_averages(periods)):
            k_seg, c_seg = analytic_optimum(scenario, table, segment.excitation)
            tag = f"{prefix}segment.{stats['label']}"
            entries += [
                (f"{tag}.K_bar", stats["K"]),
                (f"{tag}.C_bar", stats["C"]),
                (f"{tag}.P_bar", stats["P"]),
                (f"{tag}.target_K", k_seg),
                (f"{tag}.target_C", c_seg),
                (f"{tag}.rel_err_K", relative_error(stats["K"], k_seg)),
            ]
        for name in sorted(record.warnings):
            entries.append((f"{prefix}warnings.{name}", record.warnings[name]))
        return entries

    def _step_artifacts(self, scenario: ScenarioConfig, records: Dict[str, RunRecord], table: Optional[HydroTable], header: List[Tuple[str, Any]]) -> Dict[str, Any]:
        try:
            logger.info(f"[{self.run_id}] Step 4: Writing artifacts...")
            single = len(records) == 1
            entries = list(header)
            files = []
            for name, record in records.items():
                _, issues = self.validator.validate_record(record, scenario.simulation.average_periods)
                for issue in issues:
                    logger.warning(f"[{self.run_id}] {name}: {issue}")
                csv_name = "run.csv" if single else f"run_{name}.csv"
                files.append(str(self.writer.write_run(record, csv_name)))
                entries += self._record_entries(scenario, record, table, "" if single else f"{name}.")

            schedule = ExcitationSchedule(scenario, table)
            irregular = [sea for sea in schedule.seas if sea is not None and sea.kind == "irregular"]
            for i, sea in enumerate(irregular):
                name = "phases.csv" if len(irregular) == 1 else f"phases_{i + 1}.csv"
                files.append(str(self.writer.write_phases(sea, name)))

            summary = self.writer.write_summary(entries)
            return {"summary": str(summary), "files": files, "entries": dict(entries)}
        except Exception as e:
            raise self._wrap("artifacts", e)

    def _step_plots(self, scenario: ScenarioConfig, records: Dict[str, RunRecord], table: Optional[HydroTable]) -> List[str]:
        if not self.svg:
            return []
        try:
            logger.info(f"[{self.run_id}] Step 5: Plotting...")
            targets = self._targets(scenario, table)
            paths = []
            for name, record in records.items():
                suffix = "" if len(records) == 1 else f"_{name}"
                paths.append(str(plots.plot_parameters(record, self.writer.path(f"parameters{suffix}.svg"), targets)))
                paths.append(str(plots.plot_power(record, self.writer.path(f"power{suffix}.svg"))))
            return paths
        except Exception as e:
            raise self._wrap("plots", e)

    def _header(self, scenario: ScenarioConfig, records: Dict[str, RunRecord]) -> List[Tuple[str, Any]]:
        record = next(iter(records.values()))
        return [
            ("scenario", scenario.name),
            ("plant", scenario.plant.kind),
            ("scheme", record.scheme or "none"),
            ("parameters", ",".join(record.parameters) or "none"),
            ("dt", record.dt),
            ("t_end", scenario.simulation.t_end),
            ("average_periods", scenario.simulation.average_periods),
        ]

    def simulate(self, scenario: ScenarioConfig) -> Dict[str, Any]:
        """One closed-loop run, or one per entry of ``initial_conditions``."""
        table = self._step_prepare(scenario, needs_controller=True)
        if scenario.initial_conditions:
            members = [(str(i), with_start(scenario, start)) for i, start in enumerate(scenario.initial_conditions)]
        else:
            members = [("run", scenario)]
        records = self._step_run(members, table)
        result = self._step_artifacts(scenario, records, table, self._header(scenario, records))
        result["svg"] = self._step_plots(scenario, records, table)
        return result

    def adaptive(self, scenario: ScenarioConfig) -> Dict[str, Any]:
        """Scheduled sea-state changes; per-segment results are in the summary."""
        result = self.simulate(scenario)
        for key, value in result["entries"].items():
            if key.startswith("segment.") and key.endswith(".rel_err_K"):
                logger.info(f"[{self.run_id}] {key} = {value:.4g}")
        return result

    def appendix(self, scenario: ScenarioConfig) -> Dict[str, Any]:
        """Paired resistive-only and total-power runs of the same scenario."""
        table = self._step_prepare(scenario, needs_controller=True)
        members = [
            (definition, scenario.model_copy(update={"pto": scenario.pto.model_copy(update={"power_def": definition})}))
            for definition in ("resistive", "total")
        ]
        records = self._step_run(members, table)

        periods = scenario.simulation.average_periods
        targets = self._targets(scenario, table)
        k_res, c_res = records["resistive"].time_avg_params(periods)
        k_tot, c_tot = records["total"].time_avg_params(periods)
        header = [("command", "appendix")] + self._header(scenario, records) + [
            ("delta_K_fraction", abs(k_res - k_tot) / abs(targets["K"])),
            ("delta_C_fraction", abs(c_res - c_tot) / abs(targets["C"])),
        ]
        result = self._step_artifacts(scenario, records, table, header)
        result["svg"] = self._step_plots(scenario, records, table)
        return result

    def map(self, scenario: ScenarioConfig) -> Dict[str, Any]:
        """Brute-force P_bar(K, C) surface and its refined optimum."""
        table = self._step_prepare(scenario, needs_controller=False)
        try:
            logger.info(f"[{self.run_id}] Step 3: Sweeping map...")
            surface = sweep(scenario, workers=self.workers, table=table)
            optimum = refine(surface)
        except Exception as e:
            raise self._wrap("sweep", e)

        try:
            logger.info(f"[{self.run_id}] Step 4: Writing artifacts...")
            k_best, c_best, p_best = surface.argmax_point()
            k_opt, c_opt = analytic_optimum(scenario, table)
            entries = [
                ("command", "map"),
                ("scenario", scenario.name),
                ("plant", scenario.plant.kind),
                ("grid", f"{surface.shape[0]}x{surface.shape[1]}"),
                ("argmax_K", k_best),
                ("argmax_C", c_best),
                ("argmax_P", p_best),
                ("refined_K", optimum.K),
                ("refined_C", optimum.C),
                ("refined_P", optimum.power),
                ("refine_status", optimum.status),
                ("analytic_K", k_opt),
                ("analytic_C", c_opt),
                ("missing_cells", len(surface.diagnostics)),
            ]
            for (i, j), message in sorted(surface.diagnostics.items()):
                entries.append((f"diverged.{i}.{j}", message))
            files = [str(self.writer.write_surface(surface.k_values, surface.c_values, surface.power))]
            summary = self.writer.write_summary(entries)
        except Exception as e:
            raise self._wrap("artifacts", e)

        svg = []
        if self.svg:
            try:
                svg.append(str(plots.plot_surface(
                    surface.k_values, surface.c_values, surface.power,
                    self.writer.path("surface.svg"), marker=(optimum.K, optimum.C),
                )))
            except Exception as e:
                raise self._wrap("plots", e)
        return {"summary": str(summary), "files": files, "entries": dict(entries), "svg": svg, "surface": surface, "optimum": optimum}

    def fixture(self, scenario: ScenarioConfig) -> Dict[str, Any]:
        """Synthesize the scenario's hydro fixture and write it as a hydro text file."""
        try:
            logger.info(f"[{self.run_id}] Step 2: Building hydro fixture...")
            if scenario.plant.kind != "point_absorber":
                raise ConfigurationError("fixture needs a point_absorber plant", key="plant.kind")
            table = build_hydro_table(scenario.plant)
            path = write_hydro_table(table, self.writer.path("hydro.txt"))
            entries: List[Tuple[str, Any]] = [
                ("command", "fixture"),
                ("scenario", scenario.name),
                ("radiation_order", table.radiation.order),
                ("A_inf", table.a_inf),
                ("omega_min", table.bounds[0]),
                ("omega_max", table.bounds[1]),
            ]
            for i, segment in enumerate(scenario.schedule):
                k_opt, c_opt = analytic_optimum(scenario, table, segment.excitation)
                entries += [(f"schedule.{i}.K_opt", k_opt), (f"schedule.{i}.C_opt", c_opt)]
            summary = self.writer.write_summary(entries)
            return {"summary": str(summary), "files": [str(path)], "entries": dict(entries), "table": table}
        except Exception as e:
            raise self._wrap("fixture", e)
