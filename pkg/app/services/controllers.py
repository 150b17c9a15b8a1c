"""Extremum-seeking controllers.

Five schemes share one interface: ``step(metric, t, dt)`` consumes the latest
performance sample and returns the parameter vector to apply during the next
plant step. Parameters are normalized (physical value / scale); the engine
does the conversion. Relay consumes the pre-log metric mu, every other scheme
consumes J.
"""

import logging
import math
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.exceptions import ConfigurationError, DegenerateBufferError, SignalFaultError
from app.core.logger import WarningLimiter
from app.core.scenario import ControllerConfig
from app.services.signals import SampleBuffer, lsq_gradient

logger = logging.getLogger(__name__)

# Sliding-mode band/rate ratio outside this range draws a warning
BAND_RATE_RATIO = (15.0, 500.0)


def _as_vector(values, dim: int, name: str) -> np.ndarray:
    vector = np.broadcast_to(np.asarray(values, dtype=float), (dim,)).copy()
    if np.any(vector <= 0):
        raise ConfigurationError(f"{name} must be positive", key=f"controller.{name}")
    return vector


class ExtremumSeeker(ABC):
    """Common state of every scheme: parameter estimate, applied value, warmup."""

    scheme = "base"
    metric = "J"

    def __init__(self, theta0: Sequence[float], warmup: float = 0.0):
        """Initialize controller.

        Args:
            theta0: Initial normalized parameters.
            warmup: Time (s) before which the estimate stays frozen.
        """
        self.theta_hat = np.array(theta0, dtype=float).reshape(-1)
        self.theta = self.theta_hat.copy()
        self.warmup = float(warmup)
        self.armed = False
        self.lower = np.full(self.dim, -np.inf)
        self.upper = np.full(self.dim, np.inf)
        self.warnings = WarningLimiter(logger)

    @property
    def dim(self) -> int:
        return self.theta_hat.size

    def constrain(self, lower, upper) -> None:
        """Keep the estimate inside [lower, upper] (normalized, per channel).

        Raises:
            ConfigurationError: If a lower bound is not below its upper bound.
        """
        lower = np.broadcast_to(np.asarray(lower, dtype=float), (self.dim,)).copy()
        upper = np.broadcast_to(np.asarray(upper, dtype=float), (self.dim,)).copy()
        if np.any(lower >= upper):
            raise ConfigurationError(
                f"Empty parameter range {lower.tolist()} .. {upper.tolist()}", key="controller.bounds"
            )
        self.lower, self.upper = lower, upper
        offset = self.theta - self.theta_hat
        self.theta_hat = self._project(self.theta_hat)
        self.theta = self.theta_hat + offset

    def _project(self, theta: np.ndarray) -> np.ndarray:
        return np.clip(theta, self.lower, self.upper)

    def _check(self, metric: float, dt: float) -> None:
        if dt <= 0:
            raise ValueError("dt must be > 0")
        if not math.isfinite(metric):
            raise SignalFaultError(f"Non-finite performance sample {metric}", value=metric)

    def _arm(self, t: float) -> bool:
        """True once ``t`` has reached the warmup end; first call re-arms."""
        if t < self.warmup:
            return False
        if not self.armed:
            self.armed = True
            self.on_arm()
        return True

    def on_arm(self) -> None:
        """Hook run once at warmup end."""

    @abstractmethod
    def step(self, metric: float, t: float, dt: float) -> np.ndarray:
        """Consume one performance sample, return the parameters to apply."""

    def describe(self) -> Dict[str, Any]:
        """Resolved hyper-parameters, for logs and summaries."""
        return {"scheme": self.scheme, "warmup": self.warmup}


class SlidingModeSeeker(ExtremumSeeker):
    """Sliding-mode ES: J is forced to follow the ramp q(t) = q0 + rate*t.

    xi = tanh(sin(pi * (J - q) / band)), theta' = gain * xi. Each channel
    owns its own reference, band, rate and gain.
    """

    scheme = "sliding_mode"

    def __init__(
        self,
        theta0: Sequence[float],
        gain,
        band,
        rate,
        q_init: Optional[float] = None,
        warmup: float = 0.0,
    ):
        super().__init__(theta0, warmup)
        self.gain = _as_vector(gain, self.dim, "gain")
        self.band = _as_vector(band, self.dim, "band")
        self.rate = _as_vector(rate, self.dim, "rate")
        self.q = None if q_init is None else np.full(self.dim, float(q_init))
        self.xi = np.zeros(self.dim)

        ratio = self.band / self.rate
        low, high = BAND_RATE_RATIO
        if np.any(ratio < low) or np.any(ratio > high):
            logger.warning(f"Sliding-mode band/rate ratio {ratio.tolist()} is outside {low:g}..{high:g}")

    def step(self, metric: float, t: float, dt: float) -> np.ndarray:
        self._check(metric, dt)
        if not self._arm(t):
            # Reference follows J until the loop closes
            self.q = np.full(self.dim, metric)
            return self.theta.copy()
        if self.q is None:
            self.q = np.full(self.dim, metric)

        epsilon = metric - self.q
        self.xi = np.tanh(np.sin(epsilon * math.pi / self.band))
        self.theta_hat = self._project(self.theta_hat + self.gain * self.xi * dt)
        self.theta = self.theta_hat.copy()
        self.q = self.q + self.rate * dt
        return self.theta.copy()

    def describe(self) -> Dict[str, Any]:
        return {
            **super().describe(),
            "gain": self.gain.tolist(),
            "band": self.band.tolist(),
            "rate": self.rate.tolist(),
        }


class DitheredSeeker(ExtremumSeeker):
    """Scheme that applies theta_hat + a_p sin(omega_p t)."""

    def __init__(self, theta0: Sequence[float], amplitude, frequency, warmup: float = 0.0):
        super().__init__(theta0, warmup)
        self.amplitude = _as_vector(amplitude, self.dim, "dither_amplitude")
        self.frequency = _as_vector(frequency, self.dim, "dither_frequency")
        self.theta = self.theta_hat + self.dither(0.0)

    def dither(self, t: float) -> np.ndarray:
        return self.amplitude * np.sin(self.frequency * t)

    def describe(self) -> Dict[str, Any]:
        return {
            **super().describe(),
            "dither_amplitude": self.amplitude.tolist(),
            "dither_frequency": self.frequency.tolist(),
        }


class BufferedGradientSeeker(DitheredSeeker):
    """Dithered scheme driven by the OLS slope over a sample buffer."""

    def __init__(self, theta0: Sequence[float], amplitude, frequency, buffer_size: int, warmup: float = 0.0):
        super().__init__(theta0, amplitude, frequency, warmup)
        self.theta_buffer = SampleBuffer(buffer_size, self.dim)
        self.metric_buffer = SampleBuffer(buffer_size, 1)
        self.gradient = np.zeros(self.dim)

    @property
    def buffer_full(self) -> bool:
        return self.theta_buffer.is_full

    @abstractmethod
    def _drive(self, gradient: np.ndarray) -> np.ndarray:
        """Estimate rate for a given slope."""

    def step(self, metric: float, t: float, dt: float) -> np.ndarray:
        self._check(metric, dt)
        # Record the parameters that were applied while this sample formed
        self.theta_buffer.push(t, self.theta)
        self.metric_buffer.push(t, metric)

        if self._arm(t) and self.buffer_full:
            try:
                self.gradient = lsq_gradient(self.theta_buffer, self.metric_buffer)
            except DegenerateBufferError as e:
                self.warnings.warn("degenerate", f"{self.scheme}: {e.message}, holding estimate")
            else:
                self.theta_hat = self._project(self.theta_hat + self._drive(self.gradient) * dt)

        self.theta = self.theta_hat + self.dither(t)
        return self.theta.copy()

    def describe(self) -> Dict[str, Any]:
        return {**super().describe(), "buffer_size": self.theta_buffer.capacity}


class RelaySeeker(BufferedGradientSeeker):
    """Relay ES: theta_hat' = drive * sign(g), g the buffered slope of mu."""

    scheme = "relay"
    metric = "mu"

    def __init__(self, theta0, drive, amplitude, frequency, buffer_size: int, warmup: float = 0.0):
        super().__init__(theta0, amplitude, frequency, buffer_size, warmup)
        self.drive = _as_vector(drive, self.dim, "drive")

    def _drive(self, gradient: np.ndarray) -> np.ndarray:
        return self.drive * np.sign(gradient)

    def describe(self) -> Dict[str, Any]:
        return {**super().describe(), "drive": self.drive.tolist()}


class LsqSeeker(BufferedGradientSeeker):
    """Least-squares ES: theta_hat' = gain * g, g the buffered slope of J."""

    scheme = "lsq"

    def __init__(self, theta0, gain, amplitude, frequency, buffer_size: int, warmup: float = 0.0):
        super().__init__(theta0, amplitude, frequency, buffer_size, warmup)
        self.gain = _as_vector(gain, self.dim, "gain")

    def _drive(self, gradient: np.ndarray) -> np.ndarray:
        return self.gain * gradient

    def describe(self) -> Dict[str, Any]:
        return {**super().describe(), "gain": self.gain.tolist()}


class SelfDrivingSeeker(ExtremumSeeker):
    """Self-driving ES for a single parameter.

    A recursive least-squares observer (m1, m2, Q1, Q2) estimates the local
    gradient m2 from the high-passed motion of theta itself; the optimizer
    moves theta' = lambda * eta * m2. No external dither.
    """

    scheme = "self_driving"

    def __init__(
        self,
        theta0: Sequence[float],
        observer_rate: float,
        optimizer_gain: float,
        regularizer: float = 1e-11,
        m2_init: float = 1.0,
        q1_init: float = 1.0,
        q2_init: float = 1.0,
        q2_max: float = 1e12,
        warmup: float = 0.0,
    ):
        super().__init__(theta0, warmup)
        if self.dim != 1:
            raise ConfigurationError("self-driving extremum seeking is scalar-only", key="controller.parameters")
        if m2_init == 0.0 or q1_init == 0.0:
            raise ConfigurationError(
                "m2_init and q1_init must be non-zero or the parameter never moves",
                key="controller.m2_init",
            )
        if observer_rate <= 0 or optimizer_gain <= 0 or regularizer < 0:
            raise ConfigurationError("observer_rate and optimizer_gain must be > 0, regularizer >= 0")

        self.eta = float(observer_rate)
        self.gain = float(optimizer_gain)
        self.sigma = float(regularizer)
        self.q2_max = float(q2_max)
        self.m1: Optional[float] = None
        self.m2 = float(m2_init)
        self.q1 = float(q1_init)
        self.q2 = float(q2_init)
        self.rate = 0.0

    def _advance_q2(self, dt: float) -> float:
        # Q2' = eta Q2 - eta (Q1^2 + sigma) Q2^2 is logistic for frozen Q1
        growth = math.exp(self.eta * dt)
        saturation = self.q1 * self.q1 + self.sigma
        denominator = 1.0 + saturation * self.q2 * (growth - 1.0)
        # Negative Q2 escapes to -inf in finite time; a non-positive denominator means it did within dt
        q2 = self.q2 * growth / denominator if denominator > 0 else -math.inf
        if abs(q2) > self.q2_max:
            self.warnings.warn("q2", f"Self-driving |Q2| clamped at {self.q2_max:g}")
            q2 = math.copysign(self.q2_max, q2)
        return q2

    def step(self, metric: float, t: float, dt: float) -> np.ndarray:
        self._check(metric, dt)
        if self.m1 is None:
            self.m1 = metric
        active = self._arm(t)

        self.rate = 0.0
        if active:
            moved = self._project(self.theta_hat + self.gain * self.eta * self.m2 * dt)
            # Q1 integrates the motion that actually happened at a bound
            self.rate = float(moved[0] - self.theta_hat[0]) / dt
            self.theta_hat = moved
        error = metric - self.m1 - self.q1 * self.m2

        self.q2 = self._advance_q2(dt)
        self.m2 += dt * (self.eta * self.q1 * self.q2 * error - self.sigma * self.eta * self.q2 * self.m2)
        self.m1 += dt * self.eta * (metric - self.m1)
        self.q1 += dt * (-self.eta * self.q1 + self.rate)

        self.theta = self.theta_hat.copy()
        return self.theta.copy()

    def on_arm(self) -> None:
        logger.debug(f"Self-driving observer armed with m2={self.m2:.4g}, Q1={self.q1:.4g}, Q2={self.q2:.4g}")

    def describe(self) -> Dict[str, Any]:
        return {
            **super().describe(),
            "observer_rate": self.eta,
            "optimizer_gain": self.gain,
            "regularizer": self.sigma,
        }


class PerturbationSeeker(DitheredSeeker):
    """Classical perturbation ES: high-pass, demodulate, low-pass, integrate."""

    scheme = "perturbation"

    def __init__(self, theta0, gain, amplitude, frequency, highpass: float, lowpass: float, warmup: float = 0.0):
        super().__init__(theta0, amplitude, frequency, warmup)
        self.gain = _as_vector(gain, self.dim, "gain")
        if highpass <= 0 or lowpass <= 0:
            raise ConfigurationError("highpass and lowpass must be > 0", key="controller.highpass")
        self.highpass = float(highpass)
        self.lowpass = float(lowpass)
        self.hp_state: Optional[float] = None
        self.xi = np.zeros(self.dim)

    def step(self, metric: float, t: float, dt: float) -> np.ndarray:
        self._check(metric, dt)
        if self.hp_state is None:
            self.hp_state = metric

        if not self._arm(t):
            # Filters held at rest until the loop closes
            self.hp_state = metric
        else:
            ac = metric - self.hp_state
            demodulated = ac * np.sin(self.frequency * t)
            self.hp_state += dt * self.highpass * ac
            self.xi = self.xi + dt * self.lowpass * (demodulated - self.xi)
            self.theta_hat = self._project(self.theta_hat + self.gain * self.xi * dt)

        self.theta = self.theta_hat + self.dither(t)
        return self.theta.copy()

    def describe(self) -> Dict[str, Any]:
        return {
            **super().describe(),
            "gain": self.gain.tolist(),
            "highpass": self.highpass,
            "lowpass": self.lowpass,
        }


def default_dither_frequencies(omega_wave: float, dim: int, envelope_rate: Optional[float] = None) -> List[float]:
    """Base dither frequency, divided by sqrt(2) for the second channel.

    The base is omega_wave / 40, lowered to a third of the plant's envelope
    rate when that is slower, so the dither stays inside the quasi-static band.
    """
    base = omega_wave / 40.0
    if envelope_rate is not None:
        base = min(base, envelope_rate / 3.0)
    return [base / math.sqrt(2.0) ** i for i in range(dim)]


def settle_time(omega_wave: float, envelope_rate: Optional[float] = None) -> float:
    """Ten wave periods, or five envelope time constants if longer."""
    settle = 10.0 * 2.0 * math.pi / omega_wave
    if envelope_rate is not None:
        settle = max(settle, 5.0 / envelope_rate)
    return settle


def resolve_scales(config: ControllerConfig, theta0: Sequence[float]) -> np.ndarray:
    """Per-channel scales: configured, else |initial value|, else 1."""
    scales = config.channel_values("scales")
    if scales is not None:
        return np.array(scales)
    return np.array([abs(v) if v != 0 else 1.0 for v in theta0])


def build_controller(
    config: ControllerConfig,
    theta0: Sequence[float],
    omega_wave: float,
    dt: float,
    envelope_rate: Optional[float] = None,
) -> Tuple[ExtremumSeeker, np.ndarray]:
    """Instantiate a scheme from its config, filling defaults.

    Dither frequencies, buffers and warmup follow the wave period and the
    plant's envelope rate. Gains follow the expected curvature of J at the
    optimum, so the loop bandwidth stays well under the dither frequency.

    Args:
        config: Controller section of the scenario.
        theta0: Initial physical parameter values, in ``config.parameters`` order.
        omega_wave: Reference wave frequency (rad/s).
        dt: Plant time step (s).
        envelope_rate: Decay rate (1/s) of the plant's amplitude envelope, if known.

    Returns:
        (controller, scales); the controller works on theta0 / scales.
    """
    dim = len(config.parameters)
    scales = resolve_scales(config, theta0)
    theta_n = np.asarray(theta0, dtype=float) / scales
    period = 2.0 * math.pi / omega_wave
    curvature = config.channel_values("curvature")

    amplitude = config.channel_values("dither_amplitude")
    frequency = config.channel_values("dither_frequency") or default_dither_frequencies(
        omega_wave, dim, envelope_rate
    )
    if config.buffer_periods is not None:
        span = config.buffer_periods * period
    else:
        # One period of the slowest dither
        span = 2.0 * math.pi / min(frequency)
    buffer_size = max(2, int(round(span / dt)))
    buffer_span = buffer_size * dt

    warmup = config.warmup
    if warmup is None:
        warmup = settle_time(omega_wave, envelope_rate)
        if config.scheme in ("relay", "lsq"):
            # First gradient sees no start-up transient
            warmup += buffer_span

    if config.scheme == "sliding_mode":
        band = config.channel_values("band") or [0.05 * config.expected_span] * dim
        rate = config.channel_values("rate") or [b / 20.0 for b in band]
        gain = config.channel_values("gain") or [r / config.expected_span for r in rate]
        controller = SlidingModeSeeker(theta_n, gain, band, rate, q_init=config.q_init, warmup=warmup)
    elif config.scheme == "relay":
        drive = config.channel_values("drive") or [4.0 * a / buffer_span for a in amplitude]
        controller = RelaySeeker(theta_n, drive, amplitude, frequency, buffer_size, warmup=warmup)
    elif config.scheme == "lsq":
        gain = config.channel_values("gain") or [1.0 / (buffer_span * h) for h in curvature]
        controller = LsqSeeker(theta_n, gain, amplitude, frequency, buffer_size, warmup=warmup)
    elif config.scheme == "self_driving":
        controller = SelfDrivingSeeker(
            theta_n,
            observer_rate=config.observer_rate or frequency[0],
            optimizer_gain=config.optimizer_gain or 0.2 / curvature[0],
            regularizer=config.regularizer,
            m2_init=config.m2_init,
            q1_init=config.q1_init,
            q2_init=config.q2_init,
            q2_max=config.q2_max,
            warmup=warmup,
        )
    elif config.scheme == "perturbation":
        highpass = config.highpass or min(frequency) / 3.0
        lowpass = config.lowpass or min(frequency) / 3.0
        gain = config.channel_values("gain") or [1.3 * lowpass / (a * h) for a, h in zip(amplitude, curvature)]
        controller = PerturbationSeeker(theta_n, gain, amplitude, frequency, highpass, lowpass, warmup=warmup)
    else:
        raise ConfigurationError(f"Unknown scheme {config.scheme}", key="controller.scheme")

    logger.info(f"Controller {controller.describe()} on {config.parameters} with scales {scales.tolist()}")
    return controller, scales
