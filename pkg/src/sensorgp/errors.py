"""Exception types shared across the package."""


class SensorGPError(Exception):
    """Base class for all package-specific errors."""


class InputError(SensorGPError, ValueError):
    """Invalid argument: shape mismatch, out-of-range count, bad option."""


class FormatError(SensorGPError, ValueError):
    """Malformed input file. Carries file context (line number) in the message."""


class ConfigError(SensorGPError, ValueError):
    """Invalid run configuration (unknown key, missing field, bad value)."""


class NumericalError(SensorGPError, RuntimeError):
    """Linear-algebra failure that survived the jitter escalation policy."""

    def __init__(self, message, jitter_levels=None):
        super().__init__(message)
        self.jitter_levels = list(jitter_levels) if jitter_levels is not None else []


class ProtocolError(SensorGPError, RuntimeError):
    """A benchmark protocol precondition was violated (empty fold, missing holdout day)."""
