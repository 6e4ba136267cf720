"""Fit and validate Huff gravity models against transaction data."""

from .errors import (ConfigError, DegenerateCorrelationError, DegenerateError, HuffvalError,
                     InitializationError, InsufficientSampleError, IntegrityError, SchemaError,
                     SingularDesignError, StandardizationError, UndefinedIndicatorError)
from .geo import DistancePolicy, haversine_km
from .huff import (CellModelInputs, HuffFitResult, HuffParams, cell_score, expected_visit_distribution,
                   fit_cell, fit_loglinear, probability_matrix)
from .pso import OptimizationResult, SwarmConfig, maximize
from .regress import RegressionReport, ols_fit
from .synth import CityConfig, generate_city

__version__ = "0.1.0"

__all__ = [
    "CellModelInputs", "CityConfig", "ConfigError", "DegenerateCorrelationError", "DegenerateError",
    "DistancePolicy", "HuffFitResult", "HuffParams", "HuffvalError", "InitializationError",
    "InsufficientSampleError", "IntegrityError", "OptimizationResult", "RegressionReport", "SchemaError",
    "SingularDesignError", "StandardizationError", "SwarmConfig", "UndefinedIndicatorError", "cell_score",
    "expected_visit_distribution", "fit_cell", "fit_loglinear", "generate_city", "haversine_km", "maximize",
    "ols_fit", "probability_matrix",
]
