"""Simulation, moment estimation and particle filtering for a river pollution
model driven by Poisson releases at an unknown source."""

from .config import ExperimentConfig, load_config
from .errors import ConfigError, DomainError, ParameterError
from .estimate import EstimationResult, estimate_parameters, g_moments, solve_moment_equations
from .filtering import FilterOutput, ResamplePolicy, run_filter
from .model import HFunction, InitialMeasure, ModelConfig, Phi0Spec, reference_config
from .spectral import SpectralBasis, build_basis

__all__ = [
    "ConfigError", "DomainError", "EstimationResult", "ExperimentConfig", "FilterOutput",
    "HFunction", "InitialMeasure", "ModelConfig", "ParameterError", "Phi0Spec",
    "ResamplePolicy", "SpectralBasis", "build_basis", "estimate_parameters", "g_moments",
    "load_config", "reference_config", "run_filter", "solve_moment_equations",
]
__version__ = "0.1.0"
