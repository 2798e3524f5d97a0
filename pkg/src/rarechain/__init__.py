"""Rare-event simulation for absorbing Markov chains by cross-entropy importance sampling."""

__version__ = "0.1.0"

from .base import CrossEntropyIS, ZeroVarianceIS, check_measure, check_model
from .ce import CeConfig, CeTrace, ce_train, ce_update, uniform_measure
from .chain import (
    ChangeOfMeasure,
    InvalidModelError,
    Kind,
    MarkovModel,
    SamplePath,
    SupportError,
    path_probability,
    random_chain,
    validate_model,
)
from .exact import (
    ExactReport,
    GammaVector,
    VisitQuantities,
    approx_gamma_maxpath,
    ce_measure_closed_form,
    exact_report,
    exact_second_moment,
    expected_joint_counts,
    kl_distance,
    optimal_measure,
    solve_gamma,
)
from .importance import EstimatorReport, OptimalityDiagnostics, estimate, optimality_check
from .mm1 import (
    Mm1Params,
    build_mm1,
    mm1_fopt_recursion,
    mm1_gamma_analytic,
    mm1_popt_analytic,
    run_sweep,
)
from .simulate import run_paths, sample_path, substream

__all__ = [
    "CeConfig", "CeTrace", "ChangeOfMeasure", "CrossEntropyIS", "EstimatorReport", "ExactReport",
    "GammaVector", "InvalidModelError", "Kind", "MarkovModel", "Mm1Params", "OptimalityDiagnostics",
    "SamplePath", "SupportError", "VisitQuantities", "ZeroVarianceIS", "approx_gamma_maxpath",
    "build_mm1", "ce_measure_closed_form", "ce_train", "ce_update", "check_measure", "check_model",
    "estimate", "exact_report", "exact_second_moment", "expected_joint_counts", "kl_distance",
    "mm1_fopt_recursion", "mm1_gamma_analytic", "mm1_popt_analytic", "optimal_measure",
    "optimality_check", "path_probability", "random_chain", "run_paths", "run_sweep",
    "sample_path", "solve_gamma", "substream", "uniform_measure", "validate_model",
]
