"""Custom exceptions for the extremum-seeking toolkit."""

from typing import Optional, Sequence


class EscError(Exception):
    """Base exception for all toolkit errors."""

    def __init__(self, message: str, details: dict = None):
        """Initialize exception.

        Args:
            message: Error message.
            details: Additional error details.
        """
        self.message = message
        self.details = details or {}
        super().__init__(self.message)

    def __reduce__(self):
        # Subclass signatures differ; rebuild from the instance dict.
        return _rebuild, (self.__class__, self.message, self.__dict__)


def _rebuild(cls, message: str, state: dict) -> "EscError":
    error = cls.__new__(cls)
    Exception.__init__(error, message)
    error.__dict__.update(state)
    return error


class ConfigurationError(EscError):
    """Raised when a scenario or application config is invalid."""

    def __init__(self, message: str, key: Optional[str] = None, details: dict = None):
        """Initialize configuration error.

        Args:
            message: Error message.
            key: Dotted config key at fault, if known.
            details: Additional error details.
        """
        details = dict(details or {})
        if key is not None:
            details["key"] = key
        super().__init__(message, details)
        self.key = key


class SignalFaultError(EscError):
    """Raised when a non-finite sample enters the signal chain."""

    def __init__(self, message: str, value: float = None):
        super().__init__(message, {"value": value})
        self.value = value


class DegenerateBufferError(EscError):
    """Raised when buffered parameter samples carry no variance."""
    pass


class InsufficientDataError(EscError):
    """Raised when a record is too short for the requested statistic."""
    pass


class HydroRangeError(EscError):
    """Raised when a frequency falls outside a hydrodynamic table."""

    def __init__(self, message: str, omega: float, bounds: Sequence[float]):
        """Initialize range error.

        Args:
            message: Error message.
            omega: Offending frequency (rad/s).
            bounds: (low, high) grid bounds (rad/s).
        """
        super().__init__(message, {"omega": omega, "bounds": tuple(bounds)})
        self.omega = omega
        self.bounds = tuple(bounds)


class FixtureError(EscError):
    """Raised when a hydrodynamic fixture cannot be built or parsed."""
    pass


class NumericError(EscError):
    """Raised when an iterative numeric routine fails to converge."""
    pass


class DivergenceError(EscError):
    """Raised when the simulated state becomes non-finite."""

    def __init__(self, message: str, t: float, state: Sequence[float]):
        """Initialize divergence error.

        Args:
            message: Error message.
            t: Simulation time of the failure (s).
            state: Last finite state vector.
        """
        super().__init__(message, {"t": t, "state": [float(v) for v in state]})
        self.t = t
        self.state = list(state)


class ExperimentError(EscError):
    """Raised when an experiment step fails."""

    def __init__(self, message: str, step: str = None, run_id: str = None, cause: Exception = None):
        """Initialize experiment error.

        Args:
            message: Error message.
            step: Experiment step that failed.
            run_id: Run identifier.
            cause: Underlying exception.
        """
        super().__init__(message, {"step": step, "run_id": run_id})
        self.step = step
        self.run_id = run_id
        self.cause = cause


class FileOperationError(EscError):
    """Raised when artifact file operations fail."""
    pass
