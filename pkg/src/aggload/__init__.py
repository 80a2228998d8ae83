"""Deaggregation of summed load curves with misreported consumer classes."""

__version__ = "0.1.0"

from .basis import BasisSpec, DesignMatrix, eval_basis, make_knots
from .counts import (
    FraudMatrix,
    HTable,
    candidate_counts,
    column_probs,
    estimate_h_table,
    exact_h,
    exact_report_prob,
    report_prob_via_theorem,
    sample_reported,
)
from .fit import FitConfig, FitResult, fit
from .likelihood import (
    EigenCache,
    LikelihoodBreakdown,
    gauss_neg2ll,
    gauss_neg2ll_eigen,
    lstar,
    total_loglik,
)
from .model import ModelParams, TransformerData
from .simulate import SimScenario, build_case, simulate_consumer, simulate_dataset, simulate_transformer

__all__ = [
    "BasisSpec",
    "DesignMatrix",
    "EigenCache",
    "FitConfig",
    "FitResult",
    "FraudMatrix",
    "HTable",
    "LikelihoodBreakdown",
    "ModelParams",
    "SimScenario",
    "TransformerData",
    "build_case",
    "candidate_counts",
    "column_probs",
    "estimate_h_table",
    "eval_basis",
    "exact_h",
    "exact_report_prob",
    "fit",
    "gauss_neg2ll",
    "gauss_neg2ll_eigen",
    "lstar",
    "make_knots",
    "report_prob_via_theorem",
    "sample_reported",
    "simulate_consumer",
    "simulate_dataset",
    "simulate_transformer",
    "total_loglik",
]
