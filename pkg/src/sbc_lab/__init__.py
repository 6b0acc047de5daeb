"""Adaptive subsystem-based control for strict-feedback nonlinear systems."""

from .analysis import compare, lyapunov, metrics, monotonicity_report
from .config import RunSpec, scenario
from .controller import AdaptSpec, ControllerConfig, cascade_step
from .errors import ConfigError, NumericalError, SbcError
from .expr import parse, render
from .jet import Jet
from .plant import SffModel, SubsystemSpec, validation_model
from .projection import ProjectionConfig, kappa
from .sim import SimConfig, Trace, reference_jet, simulate

__all__ = [
    "AdaptSpec", "ConfigError", "ControllerConfig", "Jet", "NumericalError", "ProjectionConfig",
    "RunSpec", "SbcError", "SffModel", "SimConfig", "SubsystemSpec", "Trace", "cascade_step",
    "compare", "kappa", "lyapunov", "metrics", "monotonicity_report", "parse", "reference_jet",
    "render", "scenario", "simulate", "validation_model",
]

__version__ = "0.1.0"
