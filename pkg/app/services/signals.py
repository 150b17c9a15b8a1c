"""Performance-function chain and buffered least-squares gradients."""

import logging
import math
from collections import deque
from typing import Optional

import numpy as np

from app.core.exceptions import DegenerateBufferError, SignalFaultError

logger = logging.getLogger(__name__)

# Relative spread below which buffered parameter samples count as constant
DEGENERATE_SPREAD = 1e-10


class PerfPipeline:
    """Turns instantaneous PTO power into the performance value J.

    First-order low-pass filter (exact exponential step), moving average over
    a fixed number of samples, then ``ln(max(mean, log_floor))``. The mean
    before the log is kept as ``mu``.
    """

    def __init__(self, cutoff: float, window_samples: int, log_floor: float = 1e-12):
        """Initialize pipeline.

        Args:
            cutoff: LPF cutoff omega_L (rad/s), 0 freezes the filter.
            window_samples: Moving-average length in samples.
            log_floor: Clamp applied before the log (W).
        """
        if cutoff < 0:
            raise ValueError("cutoff must be >= 0")
        if window_samples < 1:
            raise ValueError("window_samples must be >= 1")
        if log_floor <= 0:
            raise ValueError("log_floor must be > 0")

        self.cutoff = cutoff
        self.log_floor = log_floor
        self.state = 0.0
        self.window: deque = deque(maxlen=window_samples)
        self.mu = 0.0
        self.value = math.log(log_floor)

    @classmethod
    def for_period(
        cls,
        period: float,
        dt: float,
        periods: float = 2.0,
        cutoff: Optional[float] = None,
        log_floor: float = 1e-12,
    ) -> "PerfPipeline":
        """Build a pipeline whose window spans ``periods`` wave periods.

        Args:
            period: Wave period (s).
            dt: Sample interval (s).
            periods: Window length in wave periods.
            cutoff: LPF cutoff (rad/s); defaults to omega_wave / 5.
            log_floor: Clamp applied before the log (W).
        """
        if cutoff is None:
            cutoff = 2.0 * math.pi / period / 5.0
        samples = max(1, int(round(periods * period / dt)))
        return cls(cutoff, samples, log_floor)

    @property
    def window_samples(self) -> int:
        return self.window.maxlen

    def lowpass(self, power: float, dt: float) -> float:
        """Advance the LPF by one exact zero-order-hold step."""
        alpha = -math.expm1(-self.cutoff * dt)
        if alpha >= 1.0:
            self.state = power
        else:
            self.state += alpha * (power - self.state)
        return self.state

    def step(self, power: float, dt: float) -> float:
        """Push one power sample and return J.

        Args:
            power: Instantaneous power (W).
            dt: Time since the previous sample (s).

        Returns:
            Performance value J.

        Raises:
            SignalFaultError: If ``power`` is not finite.
        """
        if dt <= 0:
            raise ValueError("dt must be > 0")
        if not math.isfinite(power):
            raise SignalFaultError(f"Non-finite power sample {power}", value=power)

        self.window.append(self.lowpass(power, dt))
        # fsum is exactly rounded, so the mean does not depend on sample order
        self.mu = math.fsum(self.window) / len(self.window)
        self.value = math.log(max(self.mu, self.log_floor))
        return self.value


class SampleBuffer:
    """Fixed-capacity ring of (t, vector) samples with strictly increasing t."""

    def __init__(self, capacity: int, dim: int = 1):
        if capacity < 2:
            raise ValueError("capacity must be >= 2")
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.capacity = capacity
        self.dim = dim
        self._t = np.empty(capacity)
        self._v = np.empty((capacity, dim))
        self._head = 0
        self._count = 0
        self._last_t = -math.inf

    def __len__(self) -> int:
        return self._count

    @property
    def is_full(self) -> bool:
        return self._count == self.capacity

    def push(self, t: float, value) -> None:
        """Append a sample, overwriting the oldest once full.

        Raises:
            ValueError: If ``t`` does not increase.
        """
        if t <= self._last_t:
            raise ValueError(f"buffer time must increase strictly ({t} after {self._last_t})")
        self._t[self._head] = t
        self._v[self._head] = value
        self._head = (self._head + 1) % self.capacity
        self._count = min(self._count + 1, self.capacity)
        self._last_t = t

    @property
    def head(self) -> int:
        """Slot the next push writes to."""
        return self._head

    def aligned_with(self, other: "SampleBuffer") -> bool:
        """True when both buffers hold the same times in the same slots."""
        if self.capacity != other.capacity or self._count != other._count or self._head != other._head:
            return False
        n = self._count
        return bool(np.array_equal(self._t[:n], other._t[:n]))

    def _order(self) -> np.ndarray:
        if not self.is_full:
            return np.arange(self._count)
        return (np.arange(self.capacity) + self._head) % self.capacity

    def times(self) -> np.ndarray:
        """Sample times, oldest first."""
        return self._t[self._order()]

    def values(self) -> np.ndarray:
        """Samples as a (n, dim) array, oldest first."""
        return self._v[self._order()]

    def raw(self):
        """Storage views in slot order (no copy, order not chronological)."""
        n = self._count
        return self._t[:n], self._v[:n]


def lsq_gradient(theta_buffer: SampleBuffer, y_buffer: SampleBuffer) -> np.ndarray:
    """Ordinary least-squares slope of y against the buffered parameters.

    Args:
        theta_buffer: Parameter samples, ``dim`` channels.
        y_buffer: Metric samples (dim 1), pushed at the same times.

    Returns:
        Slope vector, one entry per parameter channel.

    Raises:
        ValueError: If buffers are not full or not time-aligned.
        DegenerateBufferError: If a parameter channel has no spread.
    """
    if not (theta_buffer.is_full and y_buffer.is_full):
        raise ValueError("gradient needs full buffers")
    if not theta_buffer.aligned_with(y_buffer):
        raise ValueError("buffers are not time-aligned")
    _, theta = theta_buffer.raw()
    _, y = y_buffer.raw()

    y = y[:, 0]
    x = theta - theta.mean(axis=0)
    yc = y - y.mean()
    n = x.shape[0]

    spread = np.sqrt(np.einsum("ij,ij->j", x, x) / n)
    scale = np.maximum(np.abs(theta).max(axis=0), np.finfo(float).tiny)
    if np.any(spread <= DEGENERATE_SPREAD * scale):
        raise DegenerateBufferError(
            "Parameter buffer has no spread",
            {"spread": spread.tolist()},
        )

    if theta_buffer.dim == 1:
        return np.array([np.dot(x[:, 0], yc) / np.dot(x[:, 0], x[:, 0])])

    slope, _, rank, _ = np.linalg.lstsq(x, yc, rcond=None)
    if rank < theta_buffer.dim:
        raise DegenerateBufferError("Parameter channels are collinear", {"rank": int(rank)})
    return slope
