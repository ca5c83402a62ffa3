"""Simulation and analysis toolkit for a cavity-enhanced, narrowband SPDC pair source."""

from . import filters, polarization, spectrum, timing, tomography
from .config import RunConfig, load_config
from .exceptions import ConfigError, ConvergenceWarning, DegenerateFitError, EventFileError, FitError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConvergenceWarning",
    "DegenerateFitError",
    "EventFileError",
    "FitError",
    "RunConfig",
    "filters",
    "load_config",
    "polarization",
    "spectrum",
    "timing",
    "tomography",
]
