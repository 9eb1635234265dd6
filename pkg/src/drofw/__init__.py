"""Frank-Wolfe optimization over distributions and robust portfolio selection."""

from .ambiguity import (
    NORM_L2,
    NORM_LINF,
    AmbiguitySpec,
    DiscreteDistribution,
    Ellipsoid,
    FiniteSupport,
    MomentState,
    Unconstrained,
    dual_norm,
    exact_wasserstein,
    mix_moments,
    moments_of,
    perturbation_radius,
    point_norm,
)
from .core_fw import (
    FwConfig,
    FwTrace,
    apriori_bound,
    gap_threshold,
    iteration_budget,
    run_fw,
    stepsize,
)
from .minvar import (
    FixedDecisionProblem,
    FullSimplex,
    MinVarInstance,
    MinVarProblem,
    OracleOutput,
    RegularityConstants,
    ReturnFloor,
    closed_form_saddle,
    dual_function_value,
    gtrs_subproblem,
    inner_markowitz,
    oracle_ellipsoidal,
    oracle_unconstrained,
    project_simplex,
    regularity_constants,
    variance_risk,
    variance_risk_g_derivative,
)
from .risk import (
    DomainError,
    EntropicParams,
    FiniteSupportRiskSpec,
    RegularRiskSpec,
    entropic_g_derivative,
    entropic_value,
    finite_support_g_derivative,
    rr_g_derivative,
    rr_value,
    smoothness_constant,
    variance_g_derivative,
    variance_value,
)
from .saddle import (
    SaddleResult,
    ndro_smoothness,
    regularize,
    regularized_smoothness,
    run_saddle,
    verify_eps_saddle,
)

__version__ = "0.1.0"
