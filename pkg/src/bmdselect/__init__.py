"""Benchmark dose estimation from quantal dose-response data.

Parametric logistic and multistage fits, information-criterion and focused
model selection, model averaging, an isotonic nonparametric estimator and a
Monte-Carlo harness to compare them.
"""

from __future__ import annotations

from .data import QuantalDataset, load_dataset, serialize, standardize_doses
from .errors import (
    BmdError,
    BmrUnattainable,
    DataError,
    DegenerateCurve,
    FlatDoseResponseAtBmd,
    NoConvergedFits,
    NonConvergence,
    OutsideDesignRange,
    ProjectionFailed,
    SeparationDetected,
    SingularInformation,
)
from .estimators import ESTIMATORS, SELECTORS, Analysis, analyze
from .focused import (
    Design,
    FicVariant,
    RiskMatrix,
    TargetDistribution,
    build_risk_matrix,
    fic_bmd,
    fic_select,
    gamma_hat,
    kl_info,
    kl_objective,
    kl_project,
    kl_score,
    risk_estimate,
    score_covariance,
)
from .likelihood import FittedModel, fit_mle, information_criteria, log_likelihood
from .models import (
    CANONICAL_MODELS,
    LG1,
    LG2,
    MS1,
    MS2,
    BmdEstimate,
    Family,
    ModelSpec,
    bmd,
    bmd_gradient,
    dpi_ddose,
    eval_pi,
    extra_risk,
    grad_pi,
    hess_pi,
)
from .nonparametric import PavaFit, empirical_probs, nonpar_bmd, pava, piecewise_pi
from .selection import WeightVector, ic_weights, model_averaged_bmd, select_ic, two_step_bmd
from .simulation import (
    ExperimentConfig,
    ExperimentSummary,
    generate_replicate,
    preset,
    run_experiment,
    solve_curve_constraints,
)

__version__ = "0.1.0"

__all__ = [
    "BmdError",
    "BmrUnattainable",
    "DataError",
    "DegenerateCurve",
    "FlatDoseResponseAtBmd",
    "NoConvergedFits",
    "NonConvergence",
    "OutsideDesignRange",
    "ProjectionFailed",
    "SeparationDetected",
    "SingularInformation",
    "Design",
    "FicVariant",
    "RiskMatrix",
    "TargetDistribution",
    "build_risk_matrix",
    "fic_bmd",
    "fic_select",
    "gamma_hat",
    "kl_info",
    "kl_objective",
    "kl_project",
    "kl_score",
    "risk_estimate",
    "score_covariance",
    "CANONICAL_MODELS",
    "LG1",
    "LG2",
    "MS1",
    "MS2",
    "BmdEstimate",
    "Family",
    "ModelSpec",
    "bmd",
    "bmd_gradient",
    "dpi_ddose",
    "eval_pi",
    "extra_risk",
    "grad_pi",
    "hess_pi",
    "ExperimentConfig",
    "ExperimentSummary",
    "generate_replicate",
    "preset",
    "run_experiment",
    "solve_curve_constraints",
    "annotations",
    "QuantalDataset",
    "load_dataset",
    "serialize",
    "standardize_doses",
    "ESTIMATORS",
    "SELECTORS",
    "Analysis",
    "analyze",
    "FittedModel",
    "fit_mle",
    "information_criteria",
    "log_likelihood",
    "PavaFit",
    "empirical_probs",
    "nonpar_bmd",
    "pava",
    "piecewise_pi",
    "WeightVector",
    "ic_weights",
    "model_averaged_bmd",
    "select_ic",
    "two_step_bmd",
]
