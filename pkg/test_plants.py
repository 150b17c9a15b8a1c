"""Tests for the plant models and PTO power definitions."""

import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from app.core.exceptions import ConfigurationError
from app.services.hydro import optimal_msd
from app.services.plants import (
    MsdPlant,
    PaPlant,
    PtoLaw,
    envelope_rate,
    msd_deriv,
    natural_frequency,
    pa_deriv,
    pto_power,
    restoring_stiffness,
    steady_power_msd,
)

from conftest import MSD_C, MSD_F0, MSD_K, MSD_M, MSD_PERIOD


def test_power_definitions():
    resistive = PtoLaw(K=100.0, C=2.0)
    total = PtoLaw(K=100.0, C=2.0, power_def="total")
    assert pto_power(resistive, 0.1, 0.5) == pytest.approx(2.0 * 0.25)
    assert pto_power(total, 0.1, 0.5) == pytest.approx((100.0 * 0.1 + 2.0 * 0.5) * 0.5)


def test_pto_force_opposes_motion():
    assert PtoLaw(K=10.0, C=3.0).force(0.2, -1.0) == pytest.approx(-2.0 + 3.0)


def test_msd_derivative():
    plant = MsdPlant(m=2.0, c=1.0, k=4.0, f0=3.0, omega=2.0)
    pto = PtoLaw(K=6.0, C=5.0)
    t = 0.3
    state = np.array([0.1, -0.2])
    expected = (3.0 * math.sin(0.6) - 10.0 * 0.1 - 6.0 * -0.2) / 2.0
    np.testing.assert_allclose(msd_deriv(plant, pto, t, state), [-0.2, expected])


def test_msd_rejects_bad_parameters():
    with pytest.raises(ConfigurationError):
        MsdPlant(m=0.0, c=1.0, k=1.0)
    with pytest.raises(ConfigurationError):
        MsdPlant(m=1.0, c=-1.0, k=1.0)


def test_matched_load_power():
    omega = 2.0 * math.pi / MSD_PERIOD
    k_opt, c_opt = optimal_msd(MSD_M, MSD_K, omega, MSD_C)
    power = steady_power_msd(MSD_M, MSD_C, MSD_K, MSD_F0, omega, k_opt, c_opt)
    assert power == pytest.approx(MSD_F0 ** 2 / (8.0 * MSD_C))
    detuned = steady_power_msd(MSD_M, MSD_C, MSD_K, MSD_F0, omega, k_opt * 1.1, c_opt)
    assert detuned < power


def test_natural_frequency_includes_pto_stiffness():
    plant = MsdPlant(m=MSD_M, c=MSD_C, k=MSD_K)
    assert natural_frequency(plant, PtoLaw(K=1600.0, C=0.0)) == pytest.approx(math.sqrt(1800.0 / MSD_M))
    assert natural_frequency(MsdPlant(m=1.0, c=0.0, k=0.0)) == 0.0


def _section(a1, a0, b1, b0):
    ar = np.array([[0.0, 1.0], [-a0, -a1]])
    return ar, np.array([0.0, 1.0]), np.array([b0, b1])


def test_point_absorber_transfer_of_one_section():
    ar, br, cr = _section(a1=2.0, a0=9.0, b1=3.0, b0=1.0)
    plant = PaPlant(m=10.0, a_inf=2.0, ar=ar, br=br, cr=cr)
    s = 2j
    assert plant.transfer(2.0) == pytest.approx((3.0 * s + 1.0) / (s * s + 2.0 * s + 9.0))
    assert plant.state_size == 4


def test_point_absorber_derivative_balances_forces():
    ar, br, cr = _section(a1=2.0, a0=9.0, b1=3.0, b0=1.0)
    plant = PaPlant(
        m=10.0, a_inf=2.0, ar=ar, br=br, cr=cr,
        drag_coefficient=1.0, frontal_area=0.16, rho_w=1000.0, stiffness=5.0,
    )
    pto = PtoLaw(K=100.0, C=4.0)
    state = np.array([0.01, 0.2, 0.3, -0.1])
    force = 7.0
    drag = -0.5 * 1000.0 * 1.0 * 0.16 * 0.2 * 0.2
    radiation = 1.0 * 0.3 + 3.0 * -0.1
    expected = (force + drag - 105.0 * 0.01 - 4.0 * 0.2 - radiation) / 12.0
    out = plant.derivative(state, pto, force)
    assert out[0] == 0.2
    assert out[1] == pytest.approx(expected)
    np.testing.assert_allclose(out[2:], ar @ state[2:] + br * 0.2)


def test_drag_force_opposes_velocity():
    plant = PaPlant(m=1.0, a_inf=0.0, drag_coefficient=1.0, frontal_area=0.16, rho_w=1025.0)
    assert plant.drag_force(0.5) < 0.0
    assert plant.drag_force(-0.5) == pytest.approx(-plant.drag_force(0.5))


def test_point_absorber_validation():
    ar, br, cr = _section(a1=2.0, a0=9.0, b1=3.0, b0=1.0)
    with pytest.raises(ConfigurationError):
        PaPlant(m=1.0, a_inf=0.0, ar=np.array([[0.0, 1.0], [-9.0, 2.0]]), br=br, cr=cr)
    with pytest.raises(ConfigurationError):
        PaPlant(m=1.0, a_inf=0.0, ar=ar, br=np.ones(3), cr=cr)
    with pytest.raises(ConfigurationError):
        PaPlant(m=1.0, a_inf=-2.0)


def test_reactive_power_averages_to_zero_over_a_period():
    omega, amplitude, phase = 4.0 * math.pi, 0.02, 0.7
    t = np.linspace(0.0, 2.0 * math.pi / omega, 2001)
    x = amplitude * np.sin(omega * t + phase)
    xdot = amplitude * omega * np.cos(omega * t + phase)
    total = PtoLaw(K=2729.3, C=15.0, power_def="total")
    resistive = PtoLaw(K=2729.3, C=15.0)
    p_total = np.array([pto_power(total, a, b) for a, b in zip(x, xdot)])
    p_resistive = np.array([pto_power(resistive, a, b) for a, b in zip(x, xdot)])
    reactive = trapezoid(p_total - p_resistive, t) / t[-1]
    assert abs(reactive) < 1e-9 * 2729.3 * amplitude ** 2 * omega
    assert trapezoid(p_total, t) / t[-1] == pytest.approx(0.5 * 15.0 * (amplitude * omega) ** 2, rel=1e-6)


def test_point_absorber_without_memory_reduces_to_msd():
    omega, added_mass, damping = 2.0 * math.pi / 0.625, 11.9, 9.0
    absorber = PaPlant(m=MSD_M, a_inf=added_mass, damping=damping)
    msd = MsdPlant(m=MSD_M + added_mass, c=damping, k=0.0, f0=MSD_F0, omega=omega)
    pto = PtoLaw(K=3717.0, C=9.0)
    rng = np.random.default_rng(2)
    for t, x, xdot in rng.normal(size=(20, 3)):
        state = np.array([0.01 * x, 0.1 * xdot])
        np.testing.assert_array_equal(
            pa_deriv(absorber, pto, msd.forcing(t), t, state),
            msd_deriv(msd, pto, t, state),
        )


def test_envelope_rate_and_restoring_stiffness():
    msd = MsdPlant(m=MSD_M, c=MSD_C, k=MSD_K)
    pto = PtoLaw(K=2729.3, C=15.0)
    assert envelope_rate(msd, pto, 4.0 * math.pi) == pytest.approx(30.0 / (2.0 * MSD_M))
    assert restoring_stiffness(msd) == MSD_K

    absorber = PaPlant(m=10.0, a_inf=2.0, damping=1.0, stiffness=5.0)
    assert envelope_rate(absorber, pto, 3.0) == pytest.approx(16.0 / 24.0)
    assert restoring_stiffness(absorber) == 5.0

    ar, br, cr = _section(a1=2.0, a0=9.0, b1=3.0, b0=1.0)
    memory = PaPlant(m=10.0, a_inf=2.0, ar=ar, br=br, cr=cr)
    radiation = memory.transfer(2.0)
    expected = (15.0 + radiation.real) / (2.0 * (12.0 + radiation.imag / 2.0))
    assert envelope_rate(memory, pto, 2.0) == pytest.approx(expected)
