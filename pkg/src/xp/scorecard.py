"""Scorecards: display-ready analysis results, one document per slice.

A scorecard bundles, per metric, the cell summaries and every computed
treatment effect, with enough metadata (engine version, data fingerprint,
seed) to reproduce it. Documents are immutable and keyed by
(analysis id, canonical slice); plot payloads are derived views holding
all the numbers a renderer needs and nothing else.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

from . import SCHEMA_VERSION, __version__
from .causal import SummaryStatistics, TreatmentEffect
from .errors import CapabilityError, ValidationError

PLOT_KINDS = ("ci-interval", "box", "timeseries")


@dataclass(frozen=True)
class MetricResult:
    name: str
    display: Mapping
    summaries: SummaryStatistics
    effects: tuple[TreatmentEffect, ...]

    def to_doc(self) -> dict:
        return {
            "name": self.name,
            "display": dict(self.display),
            "summaries": self.summaries.to_doc(),
            "effects": [e.to_doc() for e in self.effects],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> MetricResult:
        return cls(name=doc["name"], display=doc["display"],
                   summaries=SummaryStatistics.from_doc(doc["summaries"]),
                   effects=tuple(TreatmentEffect.from_doc(e) for e in doc["effects"]))


@dataclass(frozen=True)
class Scorecard:
    analysis_id: str
    created_at: str
    slice_canonical: str
    data_fingerprint: str
    seed: int
    metrics: tuple[MetricResult, ...]
    engine_version: str = __version__
    schema_version: int = SCHEMA_VERSION

    def metric(self, name: str) -> MetricResult:
        for m in self.metrics:
            if m.name == name:
                return m
        raise ValidationError(f"scorecard has no metric {name!r}")

    def to_doc(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "analysis_id": self.analysis_id,
            "created_at": self.created_at,
            "slice": json.loads(self.slice_canonical),
            "slice_canonical": self.slice_canonical,
            "data_fingerprint": self.data_fingerprint,
            "seed": self.seed,
            "engine_version": self.engine_version,
            "metrics": [m.to_doc() for m in self.metrics],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> Scorecard:
        return cls(
            analysis_id=doc["analysis_id"], created_at=doc["created_at"],
            slice_canonical=doc["slice_canonical"],
            data_fingerprint=doc["data_fingerprint"], seed=doc["seed"],
            metrics=tuple(MetricResult.from_doc(m) for m in doc["metrics"]),
            engine_version=doc["engine_version"], schema_version=doc["schema_version"])


def build_scorecard(analysis_id: str, created_at: str, slice_canonical: str,
                    metric_order: list[str],
                    results: Mapping[str, tuple[Mapping, SummaryStatistics,
                                                list[TreatmentEffect]]],
                    data_fingerprint: str, seed: int) -> Scorecard:
    """Assemble results into a deterministic document, metrics in declared order."""
    missing = [name for name in metric_order if name not in results]
    if missing:
        raise ValidationError(f"missing results for metrics: {', '.join(missing)}")
    if len(set(metric_order)) != len(metric_order):
        raise ValidationError("metric order contains duplicates")
    metrics = []
    for name in metric_order:
        display, summaries, effects = results[name]
        metrics.append(MetricResult(name=name, display=display, summaries=summaries,
                                    effects=tuple(effects)))
    return Scorecard(analysis_id=analysis_id, created_at=created_at,
                     slice_canonical=slice_canonical, data_fingerprint=data_fingerprint,
                     seed=seed, metrics=tuple(metrics))


def serialize_scorecard(scorecard: Scorecard) -> bytes:
    """Byte-stable serialization: sorted keys, fixed indentation."""
    return (json.dumps(scorecard.to_doc(), sort_keys=True, indent=2,
                       ensure_ascii=False) + "\n").encode("utf-8")


def parse_scorecard(raw: bytes | str | dict) -> Scorecard:
    if isinstance(raw, (bytes, str)):
        raw = json.loads(raw)
    return Scorecard.from_doc(raw)


@dataclass(frozen=True)
class PlotPayload:
    """Self-contained plot data; a renderer needs no further queries."""

    kind: str
    metric: str
    display: Mapping
    series: tuple[Mapping, ...]

    def to_doc(self) -> dict:
        return {"kind": self.kind, "metric": self.metric,
                "display": dict(self.display), "series": [dict(s) for s in self.series]}


def render_plot_payload(scorecard: Scorecard, metric: str, kind: str) -> PlotPayload:
    """Translate one metric's results into drawable series for the given kind."""
    if kind not in PLOT_KINDS:
        raise ValidationError(f"unknown plot kind {kind!r}; supported: {PLOT_KINDS}")
    result = scorecard.metric(metric)
    if kind == "ci-interval":
        series = []
        for e in result.effects:
            if e.kind == "dte":
                continue
            label = e.method if e.kind == "ate" else f"{e.method} @ {e.label}"
            series.append({"label": label, "estimate": e.estimate,
                           "low": e.ci_low, "high": e.ci_high,
                           "p_value": e.p_value})
        if not series:
            raise CapabilityError(
                f"metric {metric!r} has no interval effects; ci-interval needs at "
                "least one non-bucketed statistic")
        return PlotPayload(kind, metric, result.display, tuple(series))
    if kind == "box":
        series = []
        for cell, summary in sorted(result.summaries.cells.items()):
            if summary.quantiles is None or summary.minimum is None:
                raise CapabilityError(
                    f"metric {metric!r} has no unit-level quantiles (compressed-only "
                    "summaries); box plot unavailable")
            q25, median, q75, _ = summary.quantiles
            series.append({"label": cell, "min": summary.minimum, "q25": q25,
                           "median": median, "q75": q75, "max": summary.maximum})
        return PlotPayload(kind, metric, result.display, tuple(series))
    # timeseries
    points = [e for e in result.effects if e.kind == "dte"]
    if not points:
        raise CapabilityError(
            f"metric {metric!r} has no per-bucket effects; timeseries needs a "
            "time column in the analysis")
    points.sort(key=lambda e: e.extras.get("bucket", 0))
    series = tuple({"label": e.label, "bucket": e.extras.get("bucket"),
                    "estimate": e.estimate, "low": e.ci_low, "high": e.ci_high}
                   for e in points)
    return PlotPayload(kind, metric, result.display, series)
