"""Simulator and verification harness for the radial Kahler-Ricci flow
on projective bundles under Calabi symmetry.

The flow reduces to a single parabolic equation for a radial potential
u(rho); this package evolves it, classifies the singular-time regime of
an initial class, evaluates geometric diagnostics, and monitors the a
priori estimates as empirical sup-ratio constants.
"""

from .ansatz import (
    BundleParams,
    Grid,
    KahlerClass,
    RadialProfile,
    ValidationReport,
    asymptotic_coefficients,
    canonical_profile,
    differentiate,
    make_grid,
    validate_kahler,
)
from .errors import AnsatzError, CalabiKRFError, ConfigError, StepError
from .flow import (
    FlowControls,
    FlowState,
    Regime,
    RegimeTag,
    Trajectory,
    class_at,
    classify_regime,
    derivative_consistency_residual,
    evolve,
    flow_rhs,
    make_initial_state,
    make_resolution_state,
    normalization_ct,
    step,
)
from .geometry import (
    ConeData,
    MetricEigenvalues,
    cone_data,
    epsilon_positivity_scan,
    fiber_diameter_estimate,
    max_epsilon,
    metric_eigenvalues,
    radial_length,
    reduced_volume_cohomological,
    reduced_volume_numeric,
    tube_diameter_estimate,
)
from .monitors import (
    LedgerEntry,
    VerdictReport,
    VerdictTolerances,
    Violation,
    evaluate_estimates,
    evaluate_trajectory,
    estimate_ids,
    ledger_verdict,
)
from .cli import ExperimentConfig, parse_config, write_outputs

__all__ = [
    "AnsatzError",
    "BundleParams",
    "CalabiKRFError",
    "ConeData",
    "ConfigError",
    "ExperimentConfig",
    "FlowControls",
    "FlowState",
    "Grid",
    "KahlerClass",
    "LedgerEntry",
    "MetricEigenvalues",
    "RadialProfile",
    "Regime",
    "RegimeTag",
    "StepError",
    "Trajectory",
    "ValidationReport",
    "VerdictReport",
    "VerdictTolerances",
    "Violation",
    "asymptotic_coefficients",
    "canonical_profile",
    "class_at",
    "classify_regime",
    "cone_data",
    "derivative_consistency_residual",
    "differentiate",
    "epsilon_positivity_scan",
    "estimate_ids",
    "evaluate_estimates",
    "evaluate_trajectory",
    "evolve",
    "fiber_diameter_estimate",
    "flow_rhs",
    "ledger_verdict",
    "make_grid",
    "make_initial_state",
    "make_resolution_state",
    "max_epsilon",
    "metric_eigenvalues",
    "normalization_ct",
    "parse_config",
    "radial_length",
    "reduced_volume_cohomological",
    "reduced_volume_numeric",
    "step",
    "tube_diameter_estimate",
    "validate_kahler",
    "write_outputs",
]
