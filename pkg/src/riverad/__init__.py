"""Simulated river sensor networks and graph-attention anomaly detection."""

from .dataio import MultivariateSeries, load_series, write_series
from .errors import ConfigError, DataError, NumericalError, RiveradError
from .model import FittedModel, GdnHyperparams, load_checkpoint, save_checkpoint
from .simgen import KernelParams, SimConfig, simulate
from .anomgen import AnomalyConfig, inject
from .detector import DetectorConfig, detect

__version__ = "0.1.0"

__all__ = [
    "AnomalyConfig",
    "ConfigError",
    "DataError",
    "DetectorConfig",
    "FittedModel",
    "GdnHyperparams",
    "KernelParams",
    "MultivariateSeries",
    "NumericalError",
    "RiveradError",
    "SimConfig",
    "detect",
    "inject",
    "load_checkpoint",
    "load_series",
    "save_checkpoint",
    "simulate",
    "write_series",
]
