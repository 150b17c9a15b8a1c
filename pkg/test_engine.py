"""Tests for the closed-loop simulation engine and run records."""

import math
from pathlib import Path

import numpy as np
import pytest

from app.core.exceptions import DivergenceError, InsufficientDataError
from app.core.scenario import load_scenario, parse_scenario
from app.pipeline.engine import (
    COLUMNS,
    ExcitationSchedule,
    RunRecord,
    STIFFNESS_MARGIN,
    Segment,
    build_plant,
    mean_power,
    resolve_bounds,
    resolve_dt,
    rk4_step,
    run,
    time_avg_params,
)
from app.pipeline.orchestrator import with_start
from app.services.controllers import DitheredSeeker, SelfDrivingSeeker, build_controller
from app.services.hydro import optimal_msd, optimal_pa
from app.services.plants import MsdPlant, PtoLaw, envelope_rate, steady_power_msd

from conftest import CYLINDER_MASS, MSD_C, MSD_F0, MSD_K, MSD_M, MSD_PERIOD, cylinder_scenario_data

CONFIGS = Path(__file__).parent / "configs"
MSD_K_OPT = 2729.3


def _damped_error(dt, t_end=2.0, omega=2.0 * math.pi, zeta=0.05):
    plant = MsdPlant(m=1.0, c=2.0 * zeta * omega, k=omega * omega)
    pto = PtoLaw(0.0, 0.0)
    state = np.array([1.0, 0.0])
    steps = int(round(t_end / dt))
    for i in range(steps):
        state = rk4_step(lambda t, s: plant.derivative(s, pto, 0.0), i * dt, state, dt)
    wd = omega * math.sqrt(1.0 - zeta * zeta)
    exact = math.exp(-zeta * omega * t_end) * (math.cos(wd * t_end) + zeta * omega / wd * math.sin(wd * t_end))
    return abs(state[0] - exact)


def test_rk4_is_fourth_order():
    errors = [_damped_error(dt) for dt in (0.02, 0.01, 0.005)]
    for coarse, fine in zip(errors, errors[1:]):
        assert math.log2(coarse / fine) >= 3.8


def test_zero_forcing_gives_zero_response(msd_data):
    msd_data["schedule"][0]["excitation"]["amplitude"] = 0.0
    record = run(parse_scenario(msd_data))
    for name in ("x", "xdot", "P", "mu"):
        assert np.all(record.column(name) == 0.0)
    assert np.all(record.column("J") == math.log(1e-12))


def test_matched_load_mean_power(msd_data):
    omega = 2.0 * math.pi / MSD_PERIOD
    k_opt, c_opt = optimal_msd(MSD_M, MSD_K, omega, MSD_C)
    msd_data["pto"] = {"K": k_opt, "C": c_opt}
    msd_data["simulation"] = {"t_end": 40.0, "steps_per_period": 200, "decimation": 10}
    record = run(parse_scenario(msd_data))
    expected = steady_power_msd(MSD_M, MSD_C, MSD_K, MSD_F0, omega, k_opt, c_opt)
    assert expected == pytest.approx(MSD_F0 ** 2 / (8.0 * MSD_C))
    assert mean_power(record, 10) == pytest.approx(expected, rel=1e-3)
    assert time_avg_params(record, 10) == pytest.approx((k_opt, c_opt))
    assert record.data.shape[1] == len(COLUMNS)


def test_fixed_pto_record_shape(msd_data):
    scenario = parse_scenario(msd_data)
    record = run(scenario)
    dt = resolve_dt(scenario)
    assert dt == pytest.approx(MSD_PERIOD / 50)
    assert record.data.shape[0] == int(round(20.0 / dt)) // 5 + 1
    assert record.sample_interval == pytest.approx(5 * dt)
    assert record.scheme is None


def test_unstable_stiffness_diverges(msd_data):
    msd_data["pto"] = {"K": -1.0e6, "C": 15.0}
    msd_data["simulation"]["t_end"] = 10.0
    with pytest.raises(DivergenceError) as info:
        run(parse_scenario(msd_data))
    assert info.value.t <= 10.0


def test_runs_are_deterministic(msd_data):
    msd_data["controller"] = {"scheme": "perturbation", "parameters": ["K"], "warmup": 2.0, "dither_frequency": 1.0}
    scenario = parse_scenario(msd_data)
    first = run(scenario)
    second = run(scenario)
    np.testing.assert_array_equal(first.data, second.data)


def _shipped(name, start=None, **simulation):
    """Shipped scenario, optionally restarted from ``start`` with simulation overrides."""
    scenario = load_scenario(CONFIGS / f"{name}.yaml")
    if start is not None:
        scenario = with_start(scenario, start)
    if simulation:
        scenario = scenario.model_copy(update={"simulation": scenario.simulation.model_copy(update=simulation)})
    return scenario


@pytest.mark.parametrize("k_start", [1600.0, 3800.0])
@pytest.mark.parametrize(
    "name",
    ["msd_perturbation_k", "msd_relay_k", "msd_lsq_k", "msd_self_driving_k", "msd_sliding_k"],
)
def test_single_parameter_msd_converges_from_both_sides(name, k_start):
    scenario = _shipped(name, {"K": k_start}, steps_per_period=50)
    record = run(scenario)
    k_bar, c_bar = record.time_avg_params(scenario.simulation.average_periods)
    assert k_bar == pytest.approx(MSD_K_OPT, rel=0.02)
    assert c_bar == 15.0
    assert record.column("K")[0] == pytest.approx(k_start)


def test_pto_is_frozen_through_warmup():
    scenario = _shipped("msd_perturbation_k", t_end=60.0, steps_per_period=50)
    record = run(scenario)
    warm = record.t < scenario.controller.warmup
    # Only the dither moves K before the estimate is released
    assert np.ptp(record.column("K")[warm]) <= 2.0 * 0.01 * 2729.0 + 1e-9


@pytest.mark.parametrize("name", ["msd_perturbation_kc", "msd_relay_kc", "msd_lsq_kc"])
def test_two_parameter_msd_closes_most_of_the_gap(name):
    scenario = _shipped(name, t_end=400.0, steps_per_period=50, average_periods=68)
    record = run(scenario)
    k_bar, c_bar = record.time_avg_params(68)
    assert abs(k_bar - MSD_K_OPT) < 0.5 * abs(1600.0 - MSD_K_OPT)
    assert abs(c_bar - 15.0) < 0.5 * abs(25.0 - 15.0)


def test_perturbation_finds_cylinder_optimum(cylinder_flat_table):
    controller = {
        "scheme": "perturbation",
        "parameters": ["K", "C"],
        "scales": [3717.0, 9.0],
        "dither_amplitude": [0.01, 0.05],
        "curvature": [850.0, 0.5],
    }
    data = cylinder_scenario_data(max_order=0, t_end=800.0, steps_per_period=40)
    data["pto"] = {"K": 3500.0, "C": 12.0}
    data["controller"] = controller
    record = run(parse_scenario(data), cylinder_flat_table)
    k_opt, c_opt = optimal_pa(cylinder_flat_table, CYLINDER_MASS, 2.0 * math.pi / 0.625)
    k_bar, c_bar = record.time_avg_params(320)
    assert k_bar == pytest.approx(k_opt, rel=0.03)
    assert c_bar == pytest.approx(c_opt, rel=0.15)


def test_relay_oscillates_more_than_perturbation_in_irregular_sea(cylinder_flat_table):
    spread = {}
    for scheme in ("relay", "perturbation"):
        data = cylinder_scenario_data(max_order=0, t_end=600.0, steps_per_period=40)
        data["schedule"] = [{"excitation": {"kind": "irregular", "period": 0.625, "height": 0.01, "seed": 7}}]
        data["pipeline"] = {"periods": 20}
        data["pto"] = {"K": 3717.0, "C": 12.0}
        data["controller"] = {"scheme": scheme, "parameters": ["K"], "scales": 3717.0, "curvature": 850.0}
        record = run(parse_scenario(data), cylinder_flat_table)
        spread[scheme] = float(np.std(record.column("K")[record.window(320)]))
    assert spread["relay"] > spread["perturbation"]


def test_relay_follows_a_sea_state_change(cylinder_flat_table):
    controller = {
        "scheme": "relay",
        "parameters": ["K"],
        "scales": 3717.0,
        "drive": 0.002,
        "dither_frequency": 0.08,
    }
    data = cylinder_scenario_data(max_order=0, t_end=800.0, steps_per_period=40)
    data["schedule"] = [
        {"start": 0.0, "label": "Reg.1", "excitation": {"kind": "regular", "period": 0.625, "height": 0.01}},
        {"start": 400.0, "label": "Reg.2", "excitation": {"kind": "regular", "period": 0.8, "height": 0.02}},
    ]
    data["pto"] = {"K": 3300.0, "C": 15.0}
    data["controller"] = controller
    record = run(parse_scenario(data), cylinder_flat_table)

    # Constant coefficients stay frozen at Reg.1, so the Reg.2 optimum uses its added mass
    added_mass, _, _ = cylinder_flat_table.interp(2.0 * math.pi / 0.625)
    k_first = (2.0 * math.pi / 0.625) ** 2 * (CYLINDER_MASS + added_mass)
    k_second = (2.0 * math.pi / 0.8) ** 2 * (CYLINDER_MASS + added_mass)
    first, second = record.segment_averages(100)
    assert first["K"] == pytest.approx(k_first, rel=0.1)
    assert second["K"] < 0.5 * (k_first + k_second)


def test_power_definition_leaves_the_optimum_unchanged():
    results = {}
    for definition in ("resistive", "total"):
        scenario = _shipped("msd_perturbation_k", steps_per_period=50)
        scenario = scenario.model_copy(update={"pto": scenario.pto.model_copy(update={"power_def": definition})})
        results[definition] = run(scenario).time_avg_params(scenario.simulation.average_periods)[0]
    assert results["total"] == pytest.approx(results["resistive"], rel=0.02)


def test_rate_guard_is_counted(msd_data):
    msd_data["controller"] = {"scheme": "perturbation", "parameters": ["K"], "warmup": 2.0, "dither_frequency": 1.0}
    msd_data["simulation"]["rate_guard"] = 1e-9
    record = run(parse_scenario(msd_data))
    assert record.warnings["rate_guard"] > 0

    msd_data["simulation"]["rate_guard"] = 1e6
    assert "rate_guard" not in run(parse_scenario(msd_data)).warnings


def test_default_bounds_keep_the_plant_stable():
    plant = MsdPlant(m=MSD_M, c=MSD_C, k=MSD_K)
    scales = np.array([2729.0, 15.0])
    low_k, low_c = resolve_bounds(["K", "C"], None, plant, scales)
    assert low_k == (pytest.approx(-MSD_K + STIFFNESS_MARGIN * 2729.0), math.inf)
    assert low_c == (0.0, math.inf)
    configured = [(100.0, 5000.0), (-3.0, None)]
    assert resolve_bounds(["K", "C"], configured, plant, scales) == [(100.0, 5000.0), (0.0, math.inf)]


def test_stiffness_never_drops_below_the_floor(msd_data):
    msd_data["pto"] = {"K": -500.0, "C": 15.0}
    msd_data["controller"] = {"scheme": "perturbation", "parameters": ["K"], "scales": 2729.0, "warmup": 2.0}
    msd_data["simulation"]["t_end"] = 40.0
    record = run(parse_scenario(msd_data))
    floor = -MSD_K + STIFFNESS_MARGIN * 2729.0
    assert record.column("K").min() >= floor - 1e-9
    assert record.column("K")[0] == pytest.approx(floor)


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_dithers_stay_under_the_envelope_rate(path):
    if path.stem == "msd_self_driving_kc":
        pytest.skip("rejected at load time")
    scenario = load_scenario(path)
    control = scenario.controller
    if control is None:
        return
    plant = build_plant(scenario)
    pto = PtoLaw(scenario.pto.K, scenario.pto.C)
    omega = 2.0 * math.pi / scenario.reference_period
    rate = envelope_rate(plant, pto, omega)
    theta0 = [getattr(pto, name) for name in control.parameters]
    controller, _ = build_controller(control, theta0, omega, resolve_dt(scenario), rate)
    if isinstance(controller, DitheredSeeker):
        assert max(controller.frequency) <= 0.5 * rate
    elif isinstance(controller, SelfDrivingSeeker):
        assert controller.eta <= 0.5 * rate


def test_point_absorber_matched_power(cylinder_flat_table):
    scenario = parse_scenario(cylinder_scenario_data(max_order=0, t_end=60.0))
    record = run(scenario, cylinder_flat_table, controlled=False)
    omega = 2.0 * math.pi / 0.625
    _, damping, gain = cylinder_flat_table.interp(omega)
    expected = (gain * 0.005) ** 2 / (8.0 * damping)
    assert record.mean_power(10) == pytest.approx(expected, rel=1e-3)


def test_state_space_radiation_matches_frequency_domain(cylinder_fitted_table):
    table = cylinder_fitted_table
    data = cylinder_scenario_data(max_order=8, t_end=120.0, steps_per_period=100)
    data["pto"] = {"K": 3500.0, "C": 12.0}
    record = run(parse_scenario(data), table, controlled=False)

    omega = 2.0 * math.pi / 0.625
    radiation = complex(table.radiation.transfer(omega)[0])
    impedance = 3500.0 - omega ** 2 * (CYLINDER_MASS + table.a_inf) + 1j * omega * (radiation + 12.0)
    force = table.interp(omega)[2] * 0.005
    expected = 0.5 * 12.0 * omega ** 2 * force ** 2 / abs(impedance) ** 2
    assert record.mean_power(10) == pytest.approx(expected, rel=1e-2)


def test_schedule_switches_at_segment_start(msd_data):
    msd_data["schedule"].append({"start": 10.0, "label": "second", "excitation": {"kind": "harmonic", "period": 0.4, "amplitude": 5.0}})
    schedule = ExcitationSchedule(parse_scenario(msd_data))
    assert schedule.index_at(0.0) == 0
    assert schedule.index_at(9.999) == 0
    assert schedule.index_at(10.0) == 1
    assert [s.end for s in schedule.segments] == [10.0, 20.0]
    assert schedule.segments[0].label == "segment_1"
    assert schedule.segments[1].period == 0.4


def test_irregular_segment_seeds(cylinder_flat_table):
    data = cylinder_scenario_data(max_order=0, seed=5)
    irregular = {"kind": "irregular", "period": 0.625, "height": 0.01}
    data["schedule"] = [
        {"start": 0.0, "excitation": dict(irregular)},
        {"start": 20.0, "excitation": dict(irregular)},
        {"start": 40.0, "excitation": dict(irregular, seed=11)},
    ]
    schedule = ExcitationSchedule(parse_scenario(data), cylinder_flat_table)
    assert [sea.seed for sea in schedule.seas] == [5, 6, 11]


def _synthetic_record(k_values, segments, warmup=0.0):
    t = np.arange(10001) * 0.01
    data = np.zeros((t.size, len(COLUMNS)))
    data[:, 0] = t
    data[:, COLUMNS.index("K")] = k_values(t)
    data[:, COLUMNS.index("C")] = 10.0
    data[:, COLUMNS.index("xdot")] = 1.0
    return RunRecord(data=data, segments=segments, warmup=warmup, dt=0.01)


def test_time_average_removes_dither():
    record = _synthetic_record(lambda t: 2000.0 + 50.0 * np.sin(2.0 * math.pi * t / 5.0), [Segment(0, 0.0, 100.0, "s", 1.0)])
    k_bar, c_bar = record.time_avg_params(10)
    assert k_bar == pytest.approx(2000.0, abs=1e-9)
    assert c_bar == 10.0
    assert record.mean_power(10) == pytest.approx(10.0)


def test_window_needs_enough_data():
    segments = [Segment(0, 0.0, 100.0, "s", 1.0)]
    with pytest.raises(InsufficientDataError):
        _synthetic_record(lambda t: t, segments).time_avg_params(200)
    with pytest.raises(InsufficientDataError):
        _synthetic_record(lambda t: t, segments, warmup=95.0).time_avg_params(10)


def test_segment_averages():
    segments = [Segment(0, 0.0, 50.0, "a", 1.0), Segment(1, 50.0, 100.0, "b", 1.0)]
    record = _synthetic_record(lambda t: np.where(t <= 50.0, 1000.0, 3000.0), segments)
    stats = record.segment_averages(10)
    assert stats[0]["K"] == 1000.0
    assert stats[1]["K"] == 3000.0
    short = record.segment_averages(60)
    assert all(math.isnan(entry["P"]) for entry in short)
