"""Sparse recovery by iterative Bayesian hypothesis testing."""

from .bhta import (
    SolverConfig,
    SolverResult,
    Strategy,
    Variant,
    final_threshold,
    hard_bhta,
    optimal_threshold,
    simple_schedule_length,
    soft_bhta,
    stability_check,
)
from .model import Dictionary, ProblemInstance, SpikyPrior, load_instance, save_instance

__version__ = "0.1.0"

__all__ = [
    "Dictionary", "ProblemInstance", "SolverConfig", "SolverResult", "SpikyPrior", "Strategy", "Variant",
    "final_threshold", "hard_bhta", "load_instance", "optimal_threshold", "save_instance",
    "simple_schedule_length", "soft_bhta", "stability_check",
]
