"""Context-predictive scheduling of vehicular uplink transmissions.

Connectivity maps from drive-test traces, mobility prediction, data-rate
models, the probabilistic CAT/pCAT decision engine, uplink energy estimation
and a trace-replay harness.
"""
from ._kernels import BACKEND
from .errors import (
    ConfigError,
    DataError,
    DomainError,
    EmptyResultError,
    EstimationError,
    FormatError,
    IncompatibleError,
    OrderingError,
    PcatError,
    PredictionError,
)

__version__ = "0.1.0"
