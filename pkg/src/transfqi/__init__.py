"""Transfer fitted Q-iteration with B-spline sieves.

Submodules: ``mdp_core`` (tabular MDPs and exact dynamic programming),
``sieve`` (basis and feature map), ``regress`` (least squares, lasso, CV),
``fqi`` (the engines), ``simenv`` (quadratic-reward simulator),
``oracle`` (Monte-Carlo Q* references), ``diagnostics`` and ``harness``.
"""
from .errors import (ConvergenceError, DimensionError, DomainError, FactorizationError,
                     SolverError, TransFQIError, ValidationError)
from .fqi import EngineConfig, run_method, run_onestep, run_single_fqi, run_transfqi
from .sieve import BSplineBasis, FeatureMap, QCoefficients

__version__ = "0.1.0"

__all__ = [
    "BSplineBasis", "ConvergenceError", "DimensionError", "DomainError", "EngineConfig",
    "FactorizationError", "FeatureMap", "QCoefficients", "SolverError", "TransFQIError",
    "ValidationError", "run_method", "run_onestep", "run_single_fqi", "run_transfqi",
]
