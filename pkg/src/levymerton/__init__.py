"""Optimal consumption and investment with a Levy-driven stochastic volatility factor."""

from .levy import Family, SubordinatorSpec, laplace_exponent, check_condition_b, stream
from .factor import FactorPath, OuParams, evolve
from .market import MarketModel, PRESETS, derive_constants, q_value, optimal_fraction
from .pide import SolverGrid, ValueSurface, solve

__all__ = [
    "Family", "SubordinatorSpec", "laplace_exponent", "check_condition_b", "stream",
    "FactorPath", "OuParams", "evolve",
    "MarketModel", "PRESETS", "derive_constants", "q_value", "optimal_fraction",
    "SolverGrid", "ValueSurface", "solve",
]
