"""Numerical checks of the Stein-equation bound, the collapse lemmas and the closed-form bounds."""

from .constants import (
    DerivedConstants,
    SSCFlags,
    corollary_bounds,
    derived_constants,
    ssc1_min_departure,
    ssc_flags,
    theorem_bound,
)
from .drift import DriftSpec, drift_condition_scan, empirical_drift_spec, lyapunov_drift, tail_bound_verify
from .solution import SteinFn, gradient_bound_check, stein_decomposition, stein_g

__all__ = [
    "DerivedConstants",
    "DriftSpec",
    "SSCFlags",
    "SteinFn",
    "corollary_bounds",
    "derived_constants",
    "drift_condition_scan",
    "empirical_drift_spec",
    "gradient_bound_check",
    "lyapunov_drift",
    "ssc1_min_departure",
    "ssc_flags",
    "stein_decomposition",
    "stein_g",
    "tail_bound_verify",
    "theorem_bound",
]
