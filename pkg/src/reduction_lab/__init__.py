"""Simulation and verification of energy-based state reduction.

The closed-form solution of the energy-driven stochastic Schrödinger
equation with a time-dependent coupling is sampled from independent random
data (an outcome drawn with the Born weights and a Brownian motion), then
cross-checked against direct SDE integration, two discretised Bayes
filters and analytic predictions.
"""

from __future__ import annotations

from .analysis import (
    BridgePaths,
    EnsembleReport,
    RegimeError,
    bridge_transform,
    collapse_tail_probability,
    ensemble_report,
    finite_time_equivalence,
    variance_lower_bound,
    variance_upper_bound,
)
from .coupling import CollapseRegime, CouplingSchedule, DomainError, Regime, classify
from .exact_solver import (
    AmbiguityError,
    ReductionTrajectory,
    SamplePath,
    TimeGrid,
    conditional_solution,
    energy_and_moments,
    filter_posterior,
    innovation_path,
    recover_random_data,
    restart_filter,
    run_exact,
    sample_path,
)
from .filter_oracles import (
    DiscretizedPath,
    IncrementObservations,
    bayes_path_posterior,
    covariance_check,
    increment_posterior,
)
from .kernels import backend
from .spectrum import (
    DimensionError,
    LuedersBasis,
    Spectrum,
    SpectrumError,
    StateVector,
    assemble_state,
    decompose,
)

__version__ = "0.1.0"

__all__ = [
    "AmbiguityError",
    "BridgePaths",
    "CollapseRegime",
    "CouplingSchedule",
    "DimensionError",
    "DiscretizedPath",
    "DomainError",
    "EnsembleReport",
    "IncrementObservations",
    "LuedersBasis",
    "ReductionTrajectory",
    "Regime",
    "RegimeError",
    "SamplePath",
    "Spectrum",
    "SpectrumError",
    "StateVector",
    "TimeGrid",
    "assemble_state",
    "backend",
    "bayes_path_posterior",
    "bridge_transform",
    "classify",
    "collapse_tail_probability",
    "conditional_solution",
    "covariance_check",
    "decompose",
    "energy_and_moments",
    "ensemble_report",
    "filter_posterior",
    "finite_time_equivalence",
    "increment_posterior",
    "innovation_path",
    "recover_random_data",
    "restart_filter",
    "run_exact",
    "sample_path",
    "variance_lower_bound",
    "variance_upper_bound",
]
