"""Monte Carlo estimators and closed-form bounds."""

from .blocks import BlockSpec, estimate_block_conditions, estimate_lemma42_events, passes
from .bounds import BoundsInput, DeltaBound, branching_bound_delta_p, extinction_threshold_beta
from .convergence import ConvergenceReport, convergence_diagnostic
from .correlations import CorrelationReport, check_positive_correlations
from .report import EstimateReport, config_hash, merge_reports, reports_to_csv
from .survival import estimate_survival_S2, survival_curve
from .sweeps import BisectionResult, SweepResult, bisect_pseudo_critical, monotonicity_sweep

__all__ = [
    "BisectionResult", "BlockSpec", "BoundsInput", "ConvergenceReport", "CorrelationReport", "DeltaBound",
    "EstimateReport", "SweepResult", "bisect_pseudo_critical", "branching_bound_delta_p",
    "check_positive_correlations", "config_hash", "convergence_diagnostic", "estimate_block_conditions",
    "estimate_lemma42_events", "estimate_survival_S2", "extinction_threshold_beta", "merge_reports",
    "monotonicity_sweep", "passes", "reports_to_csv", "survival_curve",
]
