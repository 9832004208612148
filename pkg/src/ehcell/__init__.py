"""Availability-aware association in energy-harvesting small-cell networks.

``ehcell.analytic`` solves the battery fixed point and evaluates outage and
coverage in closed form; ``ehcell.simulator`` checks them by Monte Carlo.
"""
__version__ = "0.1.0"

from .config import NetworkConfig, SchemePolicy, InvalidParameter, load_config, validate  # noqa: E402
from .analytic import (  # noqa: E402
    DomainError, NonConvergence, SolverFailure, build_availability_map, solve_stationary,
    outage_probability, coverage_probability, analyze,
)
from .simulator import run_trial, run_campaign, TrialEstimate  # noqa: E402

__all__ = [
    "NetworkConfig", "SchemePolicy", "InvalidParameter", "load_config", "validate",
    "DomainError", "NonConvergence", "SolverFailure", "build_availability_map", "solve_stationary",
    "outage_probability", "coverage_probability", "analyze", "run_trial", "run_campaign", "TrialEstimate",
]
