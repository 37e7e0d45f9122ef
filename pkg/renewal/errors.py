"""Exception hierarchy shared by every module of the package."""

from typing import Optional


class RenewalError(Exception):
    """Base class for all errors raised by the renewal package."""
    pass


class DistributionError(RenewalError):
    """Invalid jump model or an operation the model cannot support."""
    pass


class WeightError(RenewalError):
    """Invalid weight sequence, averaging window or averaged value."""
    pass


class WindowError(RenewalError):
    """Convolution window too narrow for the jump support."""
    pass


class DivergenceError(RenewalError):
    """A renewal series that cannot be certified finite."""
    pass


class TruncationError(RenewalError):
    """No computable truncation certificate for the requested sum."""
    pass


class ScaleError(RenewalError):
    """Invalid scaling-function argument or stable-law parameters."""
    pass


class CramerError(RenewalError):
    """Tilting parameter outside its admissible interval."""

    def __init__(self, message: str, interval: Optional[tuple] = None):
        super().__init__(message)
        self.interval = interval


class PredictionError(RenewalError):
    """Predictor preconditions are not met."""
    pass


class HarnessError(RenewalError):
    """Experiment could not be run as configured."""
    pass


class ConfigError(RenewalError):
    """Schema violation in a scenario configuration.

    ``path`` is the dotted location of the offending field.
    """

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
