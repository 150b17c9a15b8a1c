"""Shared pytest fixtures: scenario builders and hydro tables."""

import copy
import math

import pytest
import yaml

from app.core.config import reset_config
from app.core.scenario import parse_scenario
from app.services.hydro import synth_fixture

MSD_M = 18.55
MSD_K = 200.0
MSD_C = 15.0
MSD_PERIOD = 0.5
MSD_F0 = 10.0

CYLINDER_MASS = 18.55
CYLINDER_ANCHORS = [
    # (period s, K_opt N/m, B N s/m)
    (0.625, 3717.0, 9.0),
    (0.8, 2302.0, 20.0),
    (1.0, 1534.0, 21.0),
]

MSD_SCENARIO = {
    "name": "msd_test",
    "plant": {"kind": "msd", "m": MSD_M, "c": MSD_C, "k": MSD_K},
    "schedule": [{"excitation": {"kind": "harmonic", "period": MSD_PERIOD, "amplitude": MSD_F0}}],
    "pto": {"K": 1600.0, "C": 15.0},
    "simulation": {"t_end": 20.0, "steps_per_period": 50, "decimation": 5, "average_periods": 4},
}


def anchor_triples(anchors=CYLINDER_ANCHORS, mass=CYLINDER_MASS):
    """(omega, A, B) from (period, K_opt, B) rows."""
    triples = []
    for period, k_opt, damping in anchors:
        omega = 2.0 * math.pi / period
        triples.append((omega, k_opt / omega ** 2 - mass, damping))
    return triples


def cylinder_scenario_data(max_order=0, drag=0.0, **simulation):
    """Regular-sea cylinder scenario mapping (Reg.1: T = 0.625 s, H = 0.01 m)."""
    data = {
        "name": "cylinder_test",
        "plant": {
            "kind": "point_absorber",
            "m": CYLINDER_MASS,
            "geometry": "cylinder",
            "diameter": 0.16,
            "submergence": 0.25,
            "depth": 0.65,
            "drag_coefficient": drag,
            "hydro": {
                "max_order": max_order,
                "anchors": [
                    {"period": period, "k_opt": k_opt, "damping": damping}
                    for period, k_opt, damping in CYLINDER_ANCHORS
                ],
            },
        },
        "schedule": [{"excitation": {"kind": "regular", "period": 0.625, "height": 0.01}}],
        "pto": {"K": 3717.0, "C": 9.0},
        "simulation": {"t_end": 60.0, "steps_per_period": 200, "decimation": 10, "average_periods": 10},
    }
    data["simulation"].update(simulation)
    return data


@pytest.fixture(autouse=True)
def fresh_app_config():
    """Every test sees a freshly loaded application config."""
    reset_config()
    yield
    reset_config()


@pytest.fixture
def msd_data():
    """Deep copy of the MSD scenario mapping, safe to mutate."""
    return copy.deepcopy(MSD_SCENARIO)


@pytest.fixture
def msd_scenario(msd_data):
    return parse_scenario(msd_data)


@pytest.fixture(scope="session")
def cylinder_flat_table():
    """Constant-coefficient cylinder table (no radiation states)."""
    return synth_fixture(anchor_triples(), 0, depth=0.65, submergence=0.25, frontal_area=0.16)


@pytest.fixture(scope="session")
def cylinder_fitted_table():
    """Cylinder table with a fitted radiation state space."""
    return synth_fixture(anchor_triples(), 8, depth=0.65, submergence=0.25, frontal_area=0.16)


@pytest.fixture
def write_scenario(tmp_path):
    """Write a scenario mapping to YAML and return its path."""
    def _write(data, name="scenario.yaml"):
        path = tmp_path / name
        path.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
        return path
    return _write
