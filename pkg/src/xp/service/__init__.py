"""Analysis orchestration: offline pipeline, persistent store, HTTP service."""

from .engine import AnalysisDocument, Phase1, compute_scorecard, materialize, meta_replay
from .store import AnalysisStore, Job

__all__ = ["AnalysisDocument", "AnalysisStore", "Job", "Phase1", "compute_scorecard",
           "materialize", "meta_replay"]
