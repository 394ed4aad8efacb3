"""Robust fitting of generalized additive models for location, scale and shape.

The estimator maximizes a penalized transformed log-likelihood whose bounded
derivative downweights observations with unusually low likelihood, with a
correction term preserving consistency at the assumed model.  Smoothing
parameters are selected automatically (marginal-likelihood fixed-point
updates) or by robust information criteria; the robustness constant is tuned
through the median downweighting proportion of model-based simulations.
"""

from ._version import __version__
from .families import FAMILIES, DomainError, Family, Link, Support, get_family
from .inference import CovarianceBundle, EdfReport, covariances, edf, pointwise_ci
from .objective import FitResult, ObjectiveState, RobustObjective, robustness_weights
from .robust import (
    CorrectionIntegrator,
    LogLogisticRho,
    QuadratureError,
    correction_gradient,
    correction_hessian,
    correction_term,
)
from .simharness import (
    StudyConfig,
    StudyResult,
    brain_mask,
    contaminate_gamma,
    contaminate_poisson,
    gen_gamma_gamlss,
    gen_poisson_gam,
    mse,
    run_study,
)
from .smooth import (
    DesignBlock,
    DesignError,
    ModelDesign,
    SmoothSpec,
    assemble_design,
    build_bspline_basis,
    difference_penalty,
)
from .smoothsel import (
    CriterionValue,
    EfsOptions,
    fit_efs,
    fit_model,
    grid_search,
    laplace_marginal,
    efs_update,
    raic,
    rbic,
)
from .trustregion import FitReport, TrustRegionOptions, maximize, solve_subproblem
from .tuning import MdpConfig, TuneResult, mdp, tune_c

__all__ = [
    "__version__",
    "FAMILIES",
    "DomainError",
    "Family",
    "Link",
    "Support",
    "get_family",
    "CovarianceBundle",
    "EdfReport",
    "covariances",
    "edf",
    "pointwise_ci",
    "FitResult",
    "ObjectiveState",
    "RobustObjective",
    "robustness_weights",
    "CorrectionIntegrator",
    "LogLogisticRho",
    "QuadratureError",
    "correction_term",
    "correction_gradient",
    "correction_hessian",
    "StudyConfig",
    "StudyResult",
    "brain_mask",
    "contaminate_gamma",
    "contaminate_poisson",
    "gen_gamma_gamlss",
    "gen_poisson_gam",
    "mse",
    "run_study",
    "DesignBlock",
    "DesignError",
    "ModelDesign",
    "SmoothSpec",
    "assemble_design",
    "build_bspline_basis",
    "difference_penalty",
    "CriterionValue",
    "EfsOptions",
    "fit_efs",
    "fit_model",
    "grid_search",
    "laplace_marginal",
    "efs_update",
    "raic",
    "rbic",
    "FitReport",
    "TrustRegionOptions",
    "maximize",
    "solve_subproblem",
    "MdpConfig",
    "TuneResult",
    "mdp",
    "tune_c",
]
