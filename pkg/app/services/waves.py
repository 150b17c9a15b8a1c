"""Sea states, dispersion and time-domain excitation forces."""

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Tuple

import numpy as np
from scipy.integrate import trapezoid

from app.core.exceptions import NumericError

if TYPE_CHECKING:
    from app.services.hydro import HydroTable

logger = logging.getLogger(__name__)

GRAVITY = 9.81


def solve_dispersion(omega: float, depth: float, g: float = GRAVITY, tol: float = 1e-12, max_iter: int = 100) -> float:
    """Wavenumber kappa solving omega^2 = g kappa tanh(kappa d).

    Newton iteration from the deep-water seed omega^2/g, kept inside the
    bracket [omega^2/g, omega^2/(g tanh(omega^2 d/g))] by bisection fallback.

    Args:
        omega: Angular frequency (rad/s).
        depth: Water depth (m).
        g: Gravitational acceleration (m/s^2).
        tol: Residual tolerance relative to omega^2.
        max_iter: Iteration cap.

    Returns:
        Wavenumber (1/m).

    Raises:
        ValueError: On non-positive inputs.
        NumericError: If the residual tolerance is not met.
    """
    if omega <= 0 or depth <= 0:
        raise ValueError("omega and depth must be > 0")

    w2 = omega * omega
    kappa = w2 / g
    low = kappa
    high = kappa / math.tanh(kappa * depth)

    for _ in range(max_iter):
        th = math.tanh(kappa * depth)
        residual = g * kappa * th - w2
        if abs(residual) <= tol * w2:
            return kappa
        if residual < 0:
            low = kappa
        else:
            high = kappa
        slope = g * th + g * kappa * depth * (1.0 - th * th)
        candidate = kappa - residual / slope
        if not low < candidate < high:
            candidate = 0.5 * (low + high)
        kappa = candidate

    raise NumericError(
        f"Dispersion relation did not converge for omega={omega}, depth={depth}",
        {"omega": omega, "depth": depth},
    )


def dispersion_residual(omega: float, kappa: float, depth: float, g: float = GRAVITY) -> float:
    """|omega^2 - g kappa tanh(kappa d)| relative to omega^2."""
    return abs(omega * omega - g * kappa * math.tanh(kappa * depth)) / (omega * omega)


class JonswapSpectrum:
    """JONSWAP spectral density S(omega) in m^2 s.

    The Phillips constant is normalized numerically so that
    4 sqrt(integral S) equals Hs over ``band`` (multiples of omega_p).
    """

    def __init__(self, hs: float, tp: float, gamma: float = 3.3, band: Tuple[float, float] = (0.4, 4.0), g: float = GRAVITY):
        if hs < 0 or tp <= 0:
            raise ValueError("hs must be >= 0 and tp > 0")
        self.hs = hs
        self.tp = tp
        self.gamma = gamma
        self.band = band
        self.g = g
        self.wp = 2.0 * math.pi / tp

        w = np.linspace(band[0] * self.wp, band[1] * self.wp, 20001)
        area = trapezoid(self._shape(w), w)
        self.alpha = hs * hs / 16.0 / area

    def _shape(self, w):
        w = np.asarray(w, dtype=float)
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            sigma = np.where(w > self.wp, 0.09, 0.07)
            r = np.exp(-((w - self.wp) ** 2) / (2.0 * sigma ** 2 * self.wp ** 2))
            s = self.g ** 2 * w ** -5.0 * np.exp(-1.25 * (self.wp / w) ** 4) * self.gamma ** r
        return np.where(w > 0, np.nan_to_num(s, nan=0.0, posinf=0.0), 0.0)

    def __call__(self, w):
        return self.alpha * self._shape(w)


def jonswap_spectrum(omega, tp: float, hs: float, gamma: float = 3.3, band: Tuple[float, float] = (0.4, 4.0)):
    """S(omega) for peak period ``tp`` and significant height ``hs``."""
    return JonswapSpectrum(hs, tp, gamma, band)(omega)


@dataclass(frozen=True)
class SeaState:
    """Superposition of linear wave components."""
    amplitudes: np.ndarray
    omegas: np.ndarray
    wavenumbers: np.ndarray
    phases: np.ndarray
    depth: float
    kind: str
    period: float
    height: float
    seed: Optional[int] = None

    @classmethod
    def regular(cls, period: float, height: float, depth: float) -> "SeaState":
        """Monochromatic sea, a = H/2, zero phase."""
        omega = 2.0 * math.pi / period
        return cls(
            amplitudes=np.array([height / 2.0]),
            omegas=np.array([omega]),
            wavenumbers=np.array([solve_dispersion(omega, depth)]),
            phases=np.zeros(1),
            depth=depth,
            kind="regular",
            period=period,
            height=height,
        )

    @classmethod
    def irregular(
        cls,
        tp: float,
        hs: float,
        depth: float,
        seed: int,
        n_components: int = 200,
        band: Tuple[float, float] = (0.4, 4.0),
        gamma: float = 3.3,
    ) -> "SeaState":
        """JONSWAP sea: equal spacing over ``band`` * omega_p, random phases.

        Phases come from a counter-based Philox generator, uniform on [0, 2 pi).
        """
        spectrum = JonswapSpectrum(hs, tp, gamma, band)
        low, high = band[0] * spectrum.wp, band[1] * spectrum.wp
        d_omega = (high - low) / n_components
        omegas = low + (np.arange(n_components) + 0.5) * d_omega
        amplitudes = np.sqrt(2.0 * spectrum(omegas) * d_omega)
        rng = np.random.Generator(np.random.Philox(seed))
        phases = rng.uniform(0.0, 2.0 * math.pi, n_components)
        wavenumbers = np.array([solve_dispersion(w, depth) for w in omegas])
        logger.debug(f"Irregular sea Tp={tp} Hs={hs}: {n_components} components, seed {seed}")
        return cls(
            amplitudes=amplitudes,
            omegas=omegas,
            wavenumbers=wavenumbers,
            phases=phases,
            depth=depth,
            kind="irregular",
            period=tp,
            height=hs,
            seed=seed,
        )

    @property
    def size(self) -> int:
        return self.omegas.size

    def significant_height(self) -> float:
        """4 sqrt(m0) with m0 = sum a^2 / 2."""
        return 4.0 * math.sqrt(0.5 * float(np.sum(self.amplitudes ** 2)))


class HarmonicForce:
    """f0 sin(omega t), the MSD forcing."""

    def __init__(self, amplitude: float, omega: float):
        self.amplitude = amplitude
        self.omega = omega

    def force(self, t: float) -> float:
        return self.amplitude * math.sin(self.omega * t)


class WaveExcitation:
    """f_w(t) = sum Gamma(omega_i) a_i sin(omega_i t + theta_i)."""

    def __init__(self, sea: SeaState, table: "HydroTable"):
        """Bind a sea to a hydro table; range errors surface here, not per step.

        Raises:
            HydroRangeError: If a component lies outside the table grid.
        """
        self.sea = sea
        gains = np.array([table.interp(w)[2] for w in sea.omegas])
        self.coefficients = gains * sea.amplitudes
        self.omegas = sea.omegas
        self.phases = sea.phases
        if sea.size == 1:
            # Scalar path for the monochromatic case
            self._c = float(self.coefficients[0])
            self._w = float(self.omegas[0])
            self._p = float(self.phases[0])

    def force(self, t: float) -> float:
        if self.sea.size == 1:
            return self._c * math.sin(self._w * t + self._p)
        return float(np.dot(self.coefficients, np.sin(self.omegas * t + self.phases)))

    def variance(self) -> float:
        """Expected variance 1/2 sum (Gamma a)^2."""
        return 0.5 * float(np.sum(self.coefficients ** 2))


def synthesize(sea: SeaState, table: "HydroTable", t: float) -> float:
    """Wave excitation force at time ``t`` (N, or N/m for a 2-D body)."""
    return WaveExcitation(sea, table).force(t)
