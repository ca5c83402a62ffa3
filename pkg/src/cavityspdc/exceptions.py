"""Exception types raised across the toolkit."""

from sklearn.exceptions import ConvergenceWarning

__all__ = [
    "ConfigError",
    "ConvergenceWarning",
    "DegenerateFitError",
    "EventFileError",
    "FitError",
]


class ConfigError(ValueError):
    """Invalid run configuration; ``key`` names the offending dotted key path."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class EventFileError(ValueError):
    """Malformed line in an event file."""

    def __init__(self, lineno, message):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}")


class FitError(RuntimeError):
    """A least-squares fit failed to converge or produced no usable estimate."""


class DegenerateFitError(FitError):
    """The data carry no measurable signal (e.g. a flat fringe)."""
