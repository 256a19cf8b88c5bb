"""The analysis pipeline: materialize once, slice many times.

Materialization joins events with enrichments and allocations into two
cached artifacts: the enriched event table and the per-unit attribute
table. A slice request then only filters units, re-aggregates metrics,
compresses, and runs the requested statistics - no joins, which is what
keeps live slicing interactive.

Slice predicates address unit-level dimensions (the columns of the unit
table), so a slice restricts the analysis population; allocated units
inside the slice with no qualifying events keep their empty-aggregation
value rather than dropping out.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .. import causal
from ..causal import (AnalysisSpec, average_treatment_effect, conditional_ate,
                      dynamic_te, mann_whitney, quantile_te, summary_statistics)
from ..compress import SECONDS_PER, compress
from ..errors import SupportError, ValidationError
from ..metrics import (ZERO_FILLED, MetricDefinition, MetricRegistry, _positions,
                       aggregate_units, join_events)
from ..ops import group_aggregate, inner_join
from ..predicate import TRUE, Predicate, and_, clause
from ..scorecard import Scorecard, build_scorecard
from ..table import Column, ColumnType, ColumnarTable, load_table, save_table


def stable_hash(*parts: str) -> str:
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).hexdigest()
    return digest


def derive_seed(*parts: str) -> int:
    return int(stable_hash(*parts)[:15], 16)


@dataclass(frozen=True)
class AnalysisDocument:
    """The analysis request: data sources, contrast, metrics, and slicing dims."""

    name: str
    events: str  # file name under the data directory
    allocations: str
    unit_column: str
    control: str
    treatment: str
    metrics: tuple[str, ...]
    cell_column: str = "cell"
    enrichments: tuple[tuple[str, str], ...] = ()  # (file, join key)
    dimensions: tuple[str, ...] = ()
    precompute: tuple[str, ...] = ()
    covariates: tuple[str, ...] = ()
    cate_dimensions: tuple[str, ...] = ()
    time_column: str | None = None
    time_granularity: str = "day"
    theta: Mapping = field(default_factory=dict)
    seed: int | None = None

    def to_doc(self) -> dict:
        doc = {
            "name": self.name,
            "data": {"events": self.events, "allocations": self.allocations,
                     "enrichments": [{"table": t, "key": k}
                                     for t, k in self.enrichments]},
            "unit": self.unit_column,
            "cell_column": self.cell_column,
            "control": self.control,
            "treatment": self.treatment,
            "metrics": list(self.metrics),
            "dimensions": list(self.dimensions),
            "precompute": list(self.precompute),
            "covariates": list(self.covariates),
            "cate_dimensions": list(self.cate_dimensions),
        }
        if self.time_column is not None:
            doc["time"] = {"column": self.time_column,
                           "granularity": self.time_granularity}
        if self.theta:
            doc["theta"] = dict(self.theta)
        if self.seed is not None:
            doc["seed"] = self.seed
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> AnalysisDocument:
        for key in ("name", "data", "unit", "control", "treatment", "metrics"):
            if key not in doc:
                raise ValidationError(f"analysis document missing field {key!r}")
        data = doc["data"]
        for key in ("events", "allocations"):
            if key not in data:
                raise ValidationError(f"analysis data section missing {key!r}")
        time = doc.get("time") or {}
        return cls(
            name=doc["name"], events=data["events"], allocations=data["allocations"],
            unit_column=doc["unit"], cell_column=doc.get("cell_column", "cell"),
            control=doc["control"], treatment=doc["treatment"],
            metrics=tuple(doc["metrics"]),
            enrichments=tuple((e["table"], e["key"])
                              for e in data.get("enrichments", [])),
            dimensions=tuple(doc.get("dimensions", [])),
            precompute=tuple(doc.get("precompute", [])),
            covariates=tuple(doc.get("covariates", [])),
            cate_dimensions=tuple(doc.get("cate_dimensions", [])),
            time_column=time.get("column"),
            time_granularity=time.get("granularity", "day"),
            theta=doc.get("theta", {}), seed=doc.get("seed"))

    def canonical(self) -> str:
        return json.dumps(self.to_doc(), sort_keys=True, separators=(",", ":"))

    def validate(self, registry: MetricRegistry):
        missing = [m for m in self.metrics if m not in registry.snapshot()]
        if missing:
            raise ValidationError(f"unregistered metrics: {', '.join(missing)}")
        if not self.metrics:
            raise ValidationError("analysis needs at least one metric")
        if self.control == self.treatment:
            raise ValidationError("control and treatment cells must differ")
        for dim in self.precompute + self.covariates + self.cate_dimensions:
            if dim not in self.dimensions:
                raise ValidationError(
                    f"column {dim!r} must be listed in dimensions to be used")


@dataclass
class Phase1:
    """Materialized artifacts every slice request reuses."""

    events: ColumnarTable  # enriched events joined with (unit, cell, dims)
    units: ColumnarTable  # one row per allocated unit: unit, cell, dims
    fingerprint: str


def analysis_id(doc: AnalysisDocument, registry_version: int, data_dir: Path) -> str:
    """Content hash of (spec, registry version, input file fingerprints)."""
    file_hashes = []
    for name in (doc.events, doc.allocations, *[t for t, _ in doc.enrichments]):
        path = Path(data_dir) / name
        if not path.exists():
            raise ValidationError(f"data file not found: {path}")
        file_hashes.append(hashlib.sha256(path.read_bytes()).hexdigest())
    return stable_hash(doc.canonical(), str(registry_version), *file_hashes)


def materialize(doc: AnalysisDocument, registry: MetricRegistry,
                data_dir: str | Path) -> Phase1:
    """Load inputs, run the slice-independent joins, build the unit table."""
    data_dir = Path(data_dir)
    events = load_table(data_dir / doc.events, name="events")
    allocations = load_table(data_dir / doc.allocations, name="allocations")
    enrichments = {}
    for table_name, _ in doc.enrichments:
        enrichments[table_name] = load_table(data_dir / table_name, name=table_name)

    joined = join_events(doc.unit_column, events, allocations, enrichments,
                         list(doc.enrichments), doc.cell_column)

    units = allocations
    for table_name, key in doc.enrichments:
        if key != doc.unit_column:
            continue
        table = enrichments[table_name]
        before = units.row_count
        units = inner_join(units, table, key, name="units")
        if units.row_count != before:
            raise ValidationError(
                f"enrichment table {table_name!r} must cover every allocated unit "
                f"exactly once ({before} units, {units.row_count} rows after join)")
    for dim in doc.dimensions:
        if not units.has_column(dim):
            raise ValidationError(
                f"dimension {dim!r} not found in the allocation table or a "
                "unit-keyed enrichment")
    units = units.select([doc.unit_column, doc.cell_column, *doc.dimensions],
                         name="units")

    fingerprint = _tables_fingerprint(joined, units)
    return Phase1(events=joined, units=units, fingerprint=fingerprint)


def _tables_fingerprint(*tables: ColumnarTable) -> str:
    h = hashlib.sha256()
    for t in tables:
        h.update(t.name.encode())
        for col in t.columns:
            h.update(col.name.encode())
            h.update(col.data.tobytes())
            h.update(col.null_mask.tobytes())
    return h.hexdigest()


def save_phase1(phase1: Phase1, directory: str | Path):
    directory = Path(directory)
    save_table(phase1.events, directory / "events.csv")
    save_table(phase1.units, directory / "units.csv")
    (directory / "fingerprint").write_text(phase1.fingerprint, encoding="utf-8")


def load_phase1(directory: str | Path) -> Phase1:
    directory = Path(directory)
    return Phase1(
        events=load_table(directory / "events.csv", name="joined"),
        units=load_table(directory / "units.csv", name="units"),
        fingerprint=(directory / "fingerprint").read_text(encoding="utf-8").strip())


def validate_slice(doc: AnalysisDocument, pred: Predicate, units: ColumnarTable):
    """Slices may only address declared dimensions (unit-level columns)."""
    allowed = set(doc.dimensions)
    used = pred.columns()
    unknown = sorted(used - allowed)
    if unknown:
        raise ValidationError(
            f"slice references non-dimension columns: {', '.join(unknown)}; "
            f"declared dimensions: {sorted(allowed)}")
    pred.validate(units.schema())


def default_precompute_slices(doc: AnalysisDocument, units: ColumnarTable
                              ) -> list[Predicate]:
    """The empty slice plus each single value of each pre-compute dimension."""
    slices: list[Predicate] = [TRUE]
    for dim in doc.precompute:
        col = units.column(dim)
        if col.ctype != ColumnType.CATEGORICAL:
            raise ValidationError(f"pre-compute dimension {dim!r} must be categorical")
        for value in col.dictionary:
            slices.append(clause(dim, "eq", value))
    return slices


# -- per-metric statistics ----------------------------------------------------


def _base_spec(doc: AnalysisDocument, covariates=(), interactions=(),
               time_column=None, extra_theta=None) -> AnalysisSpec:
    theta = dict(doc.theta)
    if extra_theta:
        theta.update(extra_theta)
    return AnalysisSpec(
        metric="value", treatment_column=doc.cell_column, control=doc.control,
        treatment=doc.treatment, covariates=tuple(covariates),
        interactions=tuple(interactions), time_column=time_column,
        time_granularity=doc.time_granularity, theta=theta)


def _drop_null_values(table: ColumnarTable) -> ColumnarTable:
    value = table.column("value")
    if value.nulls is None:
        return table
    return table.take(np.flatnonzero(~value.nulls))


def metric_results(definition: MetricDefinition, doc: AnalysisDocument,
                   phase1: Phase1, slice_pred: Predicate, seed: int
                   ) -> tuple[Mapping, causal.SummaryStatistics,
                              list[causal.TreatmentEffect]]:
    """Summaries and one effect per requested statistic for a single metric."""
    units_in_slice = phase1.units if slice_pred is TRUE else \
        phase1.units.take(np.flatnonzero(slice_pred.evaluate(phase1.units)))
    if units_in_slice.row_count == 0:
        raise SupportError("slice matches no allocated units")

    per_unit = aggregate_units(definition, phase1.events, units_in_slice,
                               slice_pred, doc.cell_column)
    dims = [units_in_slice.column(d) for d in doc.dimensions]
    per_unit = per_unit.with_columns(dims)
    stats_table = _drop_null_values(per_unit)

    plain = _base_spec(doc)
    summaries = summary_statistics(stats_table, plain)
    values_c = stats_table.column("value").data[_cell_mask(stats_table, doc, False)]
    values_t = stats_table.column("value").data[_cell_mask(stats_table, doc, True)]

    effects: list[causal.TreatmentEffect] = []
    for statistic in definition.statistics:
        if statistic == "descriptive":
            continue  # summaries are always included
        if statistic == "t-test":
            effects.append(average_treatment_effect("t-test", plain, stats_table))
        elif statistic == "proportion-test":
            effects.append(average_treatment_effect("proportion-test", plain,
                                                    stats_table))
        elif statistic == "ols":
            effects.extend(_ols_effects(definition, doc, stats_table, seed))
        elif statistic == "mann-whitney":
            effects.append(mann_whitney(values_c, values_t,
                                        ci_level=plain.ci_level))
        elif statistic == "quantile":
            effects.append(quantile_te(
                values_c, values_t, q=float(plain.option("quantile_q")),
                b=int(plain.option("bootstrap_b")),
                seed=derive_seed(str(seed), definition.name, "quantile"),
                ci_level=plain.ci_level))
        else:
            raise ValidationError(f"unknown statistic {statistic!r}")
    return definition.display, summaries, effects


def _cell_mask(table: ColumnarTable, doc: AnalysisDocument, treat: bool) -> np.ndarray:
    col = table.column(doc.cell_column)
    label = doc.treatment if treat else doc.control
    mapping = {v: i for i, v in enumerate(col.dictionary)}
    if label not in mapping:
        raise SupportError(f"cell {label!r} has no units in this slice")
    return col.data == mapping[label]


def _ols_effects(definition: MetricDefinition, doc: AnalysisDocument,
                 stats_table: ColumnarTable, seed: int) -> list[causal.TreatmentEffect]:
    """ATE (covariate-adjusted), per-segment CATEs, per-bucket effects."""
    covariates = list(doc.covariates)
    spec = _base_spec(doc, covariates=covariates)
    packed = compress(stats_table, ["value"], doc.cell_column, covariates) \
        if covariates else stats_table
    effects = [average_treatment_effect("ols", spec, packed)]

    for dim in doc.cate_dimensions:
        segment_covs = covariates if dim in covariates else covariates + [dim]
        cate_spec = _base_spec(doc, covariates=segment_covs, interactions=[dim])
        cate_data = compress(stats_table, ["value"], doc.cell_column, segment_covs)
        for value in stats_table.column(dim).dictionary:
            try:
                effects.append(conditional_ate(
                    "ols", cate_spec, cate_data, clause(dim, "eq", value),
                    label=f"{dim}={value}"))
            except SupportError:
                continue  # segment empty within this slice
    return effects


def dte_results(definition: MetricDefinition, doc: AnalysisDocument, phase1: Phase1,
                slice_pred: Predicate) -> list[causal.TreatmentEffect]:
    """Per-time-bucket effects from a unit-by-bucket re-aggregation."""
    if doc.time_column is None:
        return []
    units_in_slice = phase1.units if slice_pred is TRUE else \
        phase1.units.take(np.flatnonzero(slice_pred.evaluate(phase1.units)))
    table = unit_bucket_table(definition, doc, phase1.events, units_in_slice,
                              slice_pred)
    spec = _base_spec(doc, time_column="bucket")
    return dynamic_te("ols", spec, table)


def unit_bucket_table(definition: MetricDefinition, doc: AnalysisDocument,
                      events: ColumnarTable, units: ColumnarTable,
                      slice_pred: Predicate) -> ColumnarTable:
    """One row per (allocated unit, observed bucket) with the metric value."""
    tcol = events.column(doc.time_column)
    if tcol.ctype != ColumnType.TIMESTAMP:
        raise ValidationError(f"time column {doc.time_column!r} must be a timestamp")
    pred = definition.event_filter if slice_pred is TRUE else \
        and_(definition.event_filter, slice_pred)
    pred.validate(events.schema())
    rows = events.take(np.flatnonzero(pred.evaluate(events)))

    seconds = SECONDS_PER[doc.time_granularity]
    buckets = np.floor_divide(rows.column(doc.time_column).data, seconds)
    rows = rows.with_columns([Column("bucket", ColumnType.INT64, buckets)],
                             name="rows")
    agg_col = definition.value_column or definition.unit_column
    grouped = group_aggregate(rows, [doc.unit_column, "bucket"],
                              [(agg_col, definition.aggregation)])
    agg_out = f"{agg_col}_{definition.aggregation}"

    observed = np.unique(buckets) if len(buckets) else np.array([0], dtype=np.int64)
    n_units = units.row_count
    n_buckets = len(observed)
    if definition.aggregation in ZERO_FILLED:
        # dense unit x bucket grid, zero-filled
        unit_col = units.column(doc.unit_column)
        cell_col = units.column(doc.cell_column)
        grid_units = np.repeat(np.arange(n_units), n_buckets)
        grid_buckets = np.tile(observed, n_units)
        values = np.zeros(n_units * n_buckets)
        pos = _grid_positions(unit_col, grouped.column(doc.unit_column),
                              grouped.column("bucket").data, observed, n_buckets)
        values[pos] = grouped.column(agg_out).data.astype(np.float64)
        cols = [unit_col.take(grid_units),
                cell_col.take(grid_units),
                Column("bucket", ColumnType.INT64, grid_buckets),
                Column("value", ColumnType.FLOAT64, values)]
        return ColumnarTable(definition.name, cols)
    # mean/min/max: keep only observed (unit, bucket) pairs, join cell back
    out = grouped.select([doc.unit_column, "bucket", agg_out])
    out = ColumnarTable(definition.name, [
        out.column(doc.unit_column), out.column("bucket"),
        out.column(agg_out).renamed("value")])
    return inner_join(out, units.select([doc.unit_column, doc.cell_column]),
                      doc.unit_column)


def _grid_positions(all_units, present_units, present_buckets, observed, n_buckets):
    unit_pos = _positions(all_units, present_units)
    bucket_pos = np.searchsorted(observed, present_buckets)
    return unit_pos * n_buckets + bucket_pos


# -- scorecard assembly -----------------------------------------------------


def compute_scorecard(doc: AnalysisDocument, registry: MetricRegistry,
                      registry_version: int, phase1: Phase1, slice_pred: Predicate,
                      seed: int, created_at: str, analysis_id_str: str) -> Scorecard:
    """Phase-2 for one slice: every metric, every requested statistic."""
    validate_slice(doc, slice_pred, phase1.units)
    snapshot = registry.snapshot(registry_version)
    results = {}
    for name in doc.metrics:
        definition = snapshot.get(name)
        if definition is None:
            raise ValidationError(f"metric {name!r} not in registry "
                                  f"version {registry_version}")
        display, summaries, effects = metric_results(definition, doc, phase1,
                                                     slice_pred, seed)
        if doc.time_column is not None and "ols" in definition.statistics:
            effects.extend(dte_results(definition, doc, phase1, slice_pred))
        results[name] = (display, summaries, effects)
    return build_scorecard(
        analysis_id=analysis_id_str, created_at=created_at,
        slice_canonical=slice_pred.canonical_string(),
        metric_order=list(doc.metrics), results=results,
        data_fingerprint=phase1.fingerprint, seed=seed)


# -- meta-analysis -----------------------------------------------------------


def meta_replay(changed: MetricDefinition, doc: AnalysisDocument,
                registry: MetricRegistry, registry_version: int, phase1: Phase1,
                seed: int, analysis_id_str: str,
                old_scorecard: Scorecard | None = None) -> dict:
    """Recompute one metric from the cached phase-1 table; report the deltas.

    Read-only: stored scorecards are never touched. The 'old' side comes
    from the stored empty-slice scorecard when available, otherwise it is
    recomputed from the original definition.
    """
    if changed.name not in doc.metrics:
        return {"analysis_id": analysis_id_str, "metric": changed.name,
                "skipped": "metric not part of this analysis"}
    if old_scorecard is not None:
        old_effects = old_scorecard.metric(changed.name).effects
    else:
        original = registry.snapshot(registry_version)[changed.name]
        _, _, old_list = metric_results(original, doc, phase1, TRUE, seed)
        if doc.time_column is not None and "ols" in original.statistics:
            old_list.extend(dte_results(original, doc, phase1, TRUE))
        old_effects = tuple(old_list)
    _, _, new_effects = metric_results(changed, doc, phase1, TRUE, seed)
    if doc.time_column is not None and "ols" in changed.statistics:
        new_effects.extend(dte_results(changed, doc, phase1, TRUE))

    new_by_key = {(e.method, e.kind, e.label): e for e in new_effects}
    rows = []
    for old in old_effects:
        new = new_by_key.get((old.method, old.kind, old.label))
        if new is None:
            continue
        alpha = 1.0 - old.ci_level
        rows.append({
            "method": old.method, "kind": old.kind, "label": old.label,
            "old_estimate": old.estimate, "new_estimate": new.estimate,
            "old_p": old.p_value, "new_p": new.p_value,
            "estimate_delta": new.estimate - old.estimate,
            "significance_flip": (old.p_value < alpha) != (new.p_value < alpha),
        })
    return {"analysis_id": analysis_id_str, "metric": changed.name, "rows": rows}
