"""Smooth relational event models fitted by nested case-control sampling."""

__version__ = "0.1.0"

from .baseline import BaselineEstimate, breslow_matched, breslow_pooled
from .basis import DesignAssembly, TermSpec, TPRSBasis, assemble_design, random_effect_block
from .covariates import CovariateEngine, CovariateSpec, CovariateTables, YearTable
from .events import (ActorIndex, Dyad, Event, EventSequence, History, RiskSet, apply_event,
                     build_history, build_risk_set, initial_state, load_network,
                     validate_sequence)
from .fit import (FitResult, SmoothCurve, corrected_aic, evaluate_tv_effect, fit_smooth_rem,
                  optimize_smoothing, penalized_irls, penalized_loglik)
from .gof import GofReport, fdr_adjust, gof_report, martingale_gof_process, standardized_statistic
from .sampling import CaseControlDataset, build_case_control_dataset, sample_controls
from .simulator import (StudyConfig, TruthSpec, default_truth, make_world, run_replications,
                        simulate_sequence)

__all__ = [
    "ActorIndex", "BaselineEstimate", "CaseControlDataset", "CovariateEngine", "CovariateSpec",
    "CovariateTables", "DesignAssembly", "Dyad", "Event", "EventSequence", "FitResult",
    "GofReport", "History", "RiskSet", "SmoothCurve", "StudyConfig", "TPRSBasis", "TermSpec",
    "TruthSpec", "YearTable", "apply_event", "assemble_design", "breslow_matched",
    "breslow_pooled", "build_case_control_dataset", "build_history", "build_risk_set",
    "corrected_aic", "default_truth", "evaluate_tv_effect", "fdr_adjust", "fit_smooth_rem",
    "gof_report", "initial_state", "load_network", "make_world", "martingale_gof_process",
    "optimize_smoothing", "penalized_irls", "penalized_loglik", "random_effect_block", "run_replications",
    "sample_controls", "simulate_sequence", "standardized_statistic", "validate_sequence",
]
