"""Plant models: mass-spring-damper and submerged heaving point absorber.

State vectors are flat numpy arrays ``[x, xdot, zeta_1 .. zeta_nr]``. Both
plants take the external force as an argument so the engine can swap
excitation sources mid-run.
"""

import math
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np

from app.core.exceptions import ConfigurationError

PowerDef = Literal["resistive", "total"]


@dataclass
class PtoLaw:
    """Linear PTO force -K x - C xdot."""
    K: float
    C: float
    power_def: PowerDef = "resistive"

    def force(self, x: float, xdot: float) -> float:
        return -self.K * x - self.C * xdot


def pto_power(pto: PtoLaw, x: float, xdot: float) -> float:
    """Instantaneous absorbed power (W).

    resistive: C xdot^2; total: (K x + C xdot) xdot, which also carries the
    reactive exchange.
    """
    if pto.power_def == "resistive":
        return pto.C * xdot * xdot
    return (pto.K * x + pto.C * xdot) * xdot


@dataclass
class MsdPlant:
    """m xddot + c xdot + k x = f0 sin(omega t) + f_PTO."""
    m: float
    c: float
    k: float
    f0: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        if self.m <= 0:
            raise ConfigurationError("MSD mass must be > 0", key="plant.m")
        if self.c < 0 or self.k < 0:
            raise ConfigurationError("MSD c and k must be >= 0", key="plant.c")

    state_size = 2

    def initial_state(self) -> np.ndarray:
        return np.zeros(2)

    def forcing(self, t: float) -> float:
        return self.f0 * math.sin(self.omega * t)

    def derivative(self, state: np.ndarray, pto: PtoLaw, force: float) -> np.ndarray:
        """(xdot, xddot) for the given external force."""
        x, xdot = state[0], state[1]
        xddot = (force - (pto.K + self.k) * x - (self.c + pto.C) * xdot) / self.m
        return np.array([xdot, xddot])


def msd_deriv(plant: MsdPlant, pto: PtoLaw, t: float, state: np.ndarray) -> np.ndarray:
    """Derivative with the plant's own harmonic forcing."""
    return plant.derivative(state, pto, plant.forcing(t))


@dataclass
class PaPlant:
    """Cummins-equation point absorber with state-space radiation memory.

    (m + A_inf) xddot + C_r zeta = f_w + f_v - K x - C xdot - b_lin xdot,
    zeta' = A_r zeta + B_r xdot, f_v = -1/2 rho C_d S_x |xdot| xdot.
    ``damping`` is an extra linear damping used by the constant-coefficient
    variant (no radiation memory).
    """
    m: float
    a_inf: float
    ar: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    br: np.ndarray = field(default_factory=lambda: np.zeros(0))
    cr: np.ndarray = field(default_factory=lambda: np.zeros(0))
    drag_coefficient: float = 0.0
    frontal_area: float = 0.0
    rho_w: float = 1025.0
    damping: float = 0.0
    stiffness: float = 0.0

    def __post_init__(self):
        self.ar = np.atleast_2d(np.asarray(self.ar, dtype=float)) if np.size(self.ar) else np.zeros((0, 0))
        self.br = np.asarray(self.br, dtype=float).reshape(-1)
        self.cr = np.asarray(self.cr, dtype=float).reshape(-1)
        n = self.br.size
        if self.ar.shape != (n, n) or self.cr.size != n:
            raise ConfigurationError(f"Radiation matrices disagree on order: A_r {self.ar.shape}, B_r {n}, C_r {self.cr.size}")
        if self.m + self.a_inf <= 0:
            raise ConfigurationError("m + A_inf must be > 0", key="plant.m")
        if self.drag_coefficient < 0:
            raise ConfigurationError("drag coefficient must be >= 0", key="plant.drag_coefficient")
        if n and np.max(np.linalg.eigvals(self.ar).real) >= 0:
            raise ConfigurationError("Radiation state matrix is not stable")
        self._inertia = self.m + self.a_inf
        self._drag = 0.5 * self.rho_w * self.drag_coefficient * self.frontal_area

    @property
    def radiation_order(self) -> int:
        return self.br.size

    @property
    def state_size(self) -> int:
        return 2 + self.radiation_order

    def initial_state(self) -> np.ndarray:
        return np.zeros(self.state_size)

    def drag_force(self, xdot: float) -> float:
        return -self._drag * abs(xdot) * xdot

    def radiation_force(self, state: np.ndarray) -> float:
        """Memory part of the radiation force, C_r zeta."""
        if not self.radiation_order:
            return 0.0
        return float(self.cr @ state[2:])

    def derivative(self, state: np.ndarray, pto: PtoLaw, force: float) -> np.ndarray:
        """(xdot, xddot, zeta') for the given wave excitation force."""
        x, xdot = state[0], state[1]
        total = (
            force
            + self.drag_force(xdot)
            - (pto.K + self.stiffness) * x
            - (pto.C + self.damping) * xdot
            - self.radiation_force(state)
        )
        out = np.empty(self.state_size)
        out[0] = xdot
        out[1] = total / self._inertia
        if self.radiation_order:
            out[2:] = self.ar @ state[2:] + self.br * xdot
        return out

    def transfer(self, omega: float) -> complex:
        """Radiation transfer function C_r (j omega I - A_r)^-1 B_r."""
        if not self.radiation_order:
            return 0j
        n = self.radiation_order
        return complex(self.cr @ np.linalg.solve(1j * omega * np.eye(n) - self.ar, self.br))


def pa_deriv(plant: PaPlant, pto: PtoLaw, f_w: float, t: float, state: np.ndarray) -> np.ndarray:
    """Derivative of the point absorber for wave force ``f_w`` at time ``t``."""
    return plant.derivative(state, pto, f_w)


def steady_power_msd(m: float, c: float, k: float, f0: float, omega: float, K: float, C: float) -> float:
    """Period-mean resistive power of the harmonic steady state (W)."""
    reactance = k + K - omega * omega * m
    resistance = omega * (c + C)
    amplitude_sq = f0 * f0 / (reactance * reactance + resistance * resistance)
    return 0.5 * C * omega * omega * amplitude_sq


def natural_frequency(plant, pto: Optional[PtoLaw] = None) -> float:
    """Undamped natural frequency including PTO stiffness, 0 if none."""
    K = pto.K if pto is not None else 0.0
    if isinstance(plant, MsdPlant):
        stiffness, inertia = plant.k + K, plant.m
    else:
        stiffness, inertia = plant.stiffness + K, plant.m + plant.a_inf
    return math.sqrt(stiffness / inertia) if stiffness > 0 else 0.0


def restoring_stiffness(plant) -> float:
    """Spring or hydrostatic stiffness the plant carries without the PTO."""
    if isinstance(plant, MsdPlant):
        return plant.k
    return plant.stiffness


def envelope_rate(plant, pto: PtoLaw, omega: float) -> float:
    """Decay rate (1/s) of the oscillation envelope near ``omega``.

    Total linear damping over twice the effective inertia. For the point
    absorber the radiation memory is frozen at ``omega``; drag is left out.
    """
    if isinstance(plant, MsdPlant):
        return (plant.c + pto.C) / (2.0 * plant.m)
    radiation = plant.transfer(omega)
    damping = plant.damping + pto.C + radiation.real
    inertia = plant.m + plant.a_inf + radiation.imag / omega
    return damping / (2.0 * inertia)
