"""Data-driven minimax-robust quickest change detection.

The post-change distribution is only known through a handful of training
samples. This package fits the least favorable member of a Wasserstein ball
around the empirical training measure (an exponential tilting of the
pre-change density, found by a concave dual program), runs CuSum-style
detectors on streams with one or several such scorers, and ships a seeded
Monte-Carlo harness for run-length curves plus radius-selection bounds.
"""

__version__ = "0.1.0"

from .distributions import (
    CostMetric,
    DataError,
    EmpiricalDistribution,
    EmpiricalPreChange,
    Gaussian1D,
    GaussianDiag,
    GenericDensity,
    Observation,
    SolverError,
    trial_rng,
)
from .lfd import (
    DualSolution,
    LfdScorer,
    SolverOptions,
    closed_form_lambda_n1,
    fit_lfd_scorer,
    sample_lfd,
    solve_dual,
)
from .detector import (
    DetectorState,
    ScenarioScorer,
    StreamResult,
    advance,
    new_state,
    run_stream,
    threshold_for_mtfa,
)
from .radius import (
    InfeasibleError,
    RadiusReport,
    gamma_s,
    min_samples,
    radius_lower_bound,
    radius_report,
    radius_upper_bound,
    ts_constant,
    wadd_upper_bound,
    wasserstein_discrete,
    wasserstein_to_prechange,
)
from .baselines import (
    ExactLlrScorer,
    GaussianMleScorer,
    KdeConfig,
    NglrScorer,
    bandwidth_rule,
    fit_gaussian_mle,
)
from .sim import (
    Estimate,
    ExperimentConfig,
    OcPoint,
    TrialPlan,
    calibrate_threshold,
    estimate_mtfa,
    estimate_wadd,
    run_kl_curve,
    run_oc_curve,
)
from .kernels import BACKEND as kernel_backend

__all__ = [
    "__version__",
    "kernel_backend",
    # distributions
    "CostMetric", "DataError", "EmpiricalDistribution", "EmpiricalPreChange",
    "Gaussian1D", "GaussianDiag", "GenericDensity", "Observation",
    "SolverError", "trial_rng",
    # lfd
    "DualSolution", "LfdScorer", "SolverOptions", "closed_form_lambda_n1",
    "fit_lfd_scorer", "sample_lfd", "solve_dual",
    # detector
    "DetectorState", "ScenarioScorer", "StreamResult", "advance", "new_state",
    "run_stream", "threshold_for_mtfa",
    # radius
    "InfeasibleError", "RadiusReport", "gamma_s", "min_samples",
    "radius_lower_bound", "radius_report", "radius_upper_bound", "ts_constant",
    "wadd_upper_bound", "wasserstein_discrete", "wasserstein_to_prechange",
    # baselines
    "ExactLlrScorer", "GaussianMleScorer", "KdeConfig", "NglrScorer",
    "bandwidth_rule", "fit_gaussian_mle",
    # sim
    "Estimate", "ExperimentConfig", "OcPoint", "TrialPlan",
    "calibrate_threshold", "estimate_mtfa", "estimate_wadd", "run_kl_curve",
    "run_oc_curve",
]
