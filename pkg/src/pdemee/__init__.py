"""Per-decision weighted estimating equations for causal excursion effects on
binary proximal outcomes in micro-randomized trials."""

__version__ = "0.1.0"

from .core import (Constant, EmpiricalMean, LogisticOnS, MrtDataset, ProximalOutcomes, RandProb,
                   WeightSet, build_proximal_outcomes, build_proximal_outcomes_generalized,
                   compute_weights, default_numerator)
from .errors import (ConfigError, DataError, NonConvergenceError, NumericError, PdEmeeError,
                     PositivityError, SingularJacobianError, StructuralError)
from .estimators import EstimatorSpec, FitResult, Kind, SolverConfig, fit
from .gee import GeeSpec, fit_gee
from .inference import InferenceConfig, summarize
from .kernels import BACKEND
from .simgen import GenerativeConfig, generate_trial, true_marginal_beta0

__all__ = [
    "BACKEND", "Constant", "ConfigError", "DataError", "EmpiricalMean", "EstimatorSpec",
    "FitResult", "GeeSpec", "GenerativeConfig", "InferenceConfig", "Kind", "LogisticOnS",
    "MrtDataset", "NonConvergenceError", "NumericError", "PdEmeeError", "PositivityError",
    "ProximalOutcomes", "RandProb", "SingularJacobianError", "SolverConfig", "StructuralError",
    "WeightSet", "build_proximal_outcomes", "build_proximal_outcomes_generalized",
    "compute_weights", "default_numerator", "fit", "fit_gee", "generate_trial", "summarize",
    "true_marginal_beta0",
]
