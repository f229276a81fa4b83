"""Structured-penalty estimation for functional linear models.

Everything is organized around the generalized SVD of a (design,
penalty) pair: estimators are filter expansions in that basis,
diagnostics are closed forms in the factor triples, and the tuning and
simulation layers reuse the same factorization.
"""

from .diagnostics import (
    AbMseBreakdown,
    FitDiagnostics,
    compute_bias,
    compute_mse,
    compute_variance,
    diagnose,
    empirical_covariance,
    mse_ab_closed_form,
    pcr_stabilization_condition,
    perturbation_bound,
)
from .errors import (
    ConfigError,
    ConstantResponse,
    DimensionMismatch,
    DivisionByZero,
    EmptyGrid,
    EmptyPrior,
    FlatLikelihood,
    InvalidOrder,
    NonOrthogonalDecomposition,
    ParseError,
    PeerError,
    PerturbationTooLarge,
    RankDeficient,
    ShapeMismatch,
    SingularSystem,
    TooManyComponents,
    WrongPath,
    WrongPrior,
    ZeroBasis,
)
from .estimators import (
    PenalizedFit,
    StandardFormTransform,
    fit_ab_family,
    fit_filter_family,
    fit_goutis,
    fit_ideal_filter,
    fit_min_norm,
    fit_pcr,
    fit_penalized,
    partial_sums,
    standard_form,
    standard_form_transform,
)
from .gsvd import (
    DesignMatrix,
    GsvdFactors,
    PenaltyOperator,
    compute_gsvd,
    filter_expansion,
    reduce_penalty_rows,
    weighted_pinv,
)
from .penalties import (
    GridSpec,
    SubspacePrior,
    derivative_penalty,
    goutis_penalty,
    identity_penalty,
    multispace_penalty,
    orthonormal_projector,
    projection_penalty,
    stein_penalty,
    svd_prior,
)
from .simulate import (
    SimulationSpec,
    StudyResult,
    calibrate_noise,
    gen_bumps,
    gen_cosine,
    gen_mixtures,
    run_study,
)
from .tuning import TuningResult, grid_search, reml_select_alpha

__all__ = [
    "AbMseBreakdown",
    "ConfigError",
    "ConstantResponse",
    "DesignMatrix",
    "DimensionMismatch",
    "DivisionByZero",
    "EmptyGrid",
    "EmptyPrior",
    "FitDiagnostics",
    "FlatLikelihood",
    "GridSpec",
    "GsvdFactors",
    "InvalidOrder",
    "NonOrthogonalDecomposition",
    "ParseError",
    "PeerError",
    "PenalizedFit",
    "PenaltyOperator",
    "PerturbationTooLarge",
    "RankDeficient",
    "ShapeMismatch",
    "SimulationSpec",
    "SingularSystem",
    "StandardFormTransform",
    "StudyResult",
    "SubspacePrior",
    "TooManyComponents",
    "TuningResult",
    "WrongPath",
    "WrongPrior",
    "ZeroBasis",
    "calibrate_noise",
    "compute_bias",
    "compute_gsvd",
    "compute_mse",
    "compute_variance",
    "derivative_penalty",
    "diagnose",
    "empirical_covariance",
    "filter_expansion",
    "fit_ab_family",
    "fit_filter_family",
    "fit_goutis",
    "fit_ideal_filter",
    "fit_min_norm",
    "fit_pcr",
    "fit_penalized",
    "gen_bumps",
    "gen_cosine",
    "gen_mixtures",
    "goutis_penalty",
    "grid_search",
    "identity_penalty",
    "mse_ab_closed_form",
    "multispace_penalty",
    "orthonormal_projector",
    "partial_sums",
    "pcr_stabilization_condition",
    "perturbation_bound",
    "projection_penalty",
    "reduce_penalty_rows",
    "reml_select_alpha",
    "run_study",
    "standard_form",
    "standard_form_transform",
    "stein_penalty",
    "svd_prior",
    "weighted_pinv",
]
