"""Thermal averages of spin chains from random matrix product states."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import InvalidArgumentError, NumericalFailureError, ResourceLimitError
from .estimator import (
    EstimateResult,
    EstimatorPlan,
    SampleRecord,
    estimate_thermal_expectation,
    estimate_trace,
    plan_samples,
    relative_variance_scan,
    variance_diagnostics,
)
from .hamiltonians import (
    FilterSpec,
    TrotterSpec,
    build_model,
    filter_spec_for,
    heisenberg_mpo,
    ising_mpo,
    magnetization_mpo,
    microcanonical_filter,
)
from .mps import MpoOperator, MpsState
from .sampler import RmpsSpec, sample_rmps, sample_seed_for

__all__ = [
    "EstimateResult",
    "EstimatorPlan",
    "FilterSpec",
    "InvalidArgumentError",
    "MpoOperator",
    "MpsState",
    "NumericalFailureError",
    "ResourceLimitError",
    "RmpsSpec",
    "SampleRecord",
    "TrotterSpec",
    "build_model",
    "estimate_thermal_expectation",
    "estimate_trace",
    "filter_spec_for",
    "heisenberg_mpo",
    "ising_mpo",
    "magnetization_mpo",
    "microcanonical_filter",
    "plan_samples",
    "relative_variance_scan",
    "sample_rmps",
    "sample_seed_for",
    "variance_diagnostics",
]
