"""Causal effect models behind a shared potential-outcomes interface.

Every model implements train and predict-under-forced-treatment; the
generic effect procedure in :mod:`xp.causal.effects` turns that pair into
average, conditional, and per-time-bucket treatment effects.
"""

from .base import (AnalysisSpec, CellSummary, FittedModel, SummaryStatistics,
                   TreatmentEffect, model_names, resolve_model)
from .effects import (average_treatment_effect, conditional_ate, dynamic_te, fit,
                      predict_potential)
from .ttest import pooled_ttest, two_proportion_test, welch_ttest
from .rank import mann_whitney
from .quantile import quantile_te
from .bootstrap import bootstrap_variance
from .summary import summary_statistics

# statistics metric definitions may request: the registered causal models
# plus the unit-level tests that bypass the model interface
UNIT_LEVEL_STATISTICS = ("mann-whitney", "quantile")


def known_statistics() -> list[str]:
    return sorted(set(model_names()) | set(UNIT_LEVEL_STATISTICS))

__all__ = [
    "AnalysisSpec", "FittedModel", "SummaryStatistics", "TreatmentEffect",
    "CellSummary", "UNIT_LEVEL_STATISTICS", "average_treatment_effect", "bootstrap_variance",
    "conditional_ate", "dynamic_te", "fit", "known_statistics", "mann_whitney",
    "model_names", "pooled_ttest", "predict_potential", "quantile_te",
    "resolve_model", "summary_statistics", "two_proportion_test", "welch_ttest",
]
