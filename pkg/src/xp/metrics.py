"""Declarative metric definitions and their two-phase query plans.

A metric is a closed declarative form: an event filter, a per-unit
aggregation, and an optional threshold that turns the unit value into a
boolean. Compilation splits it into a slice-independent phase (joins plus
the metric's own filter) and a per-slice phase (slice filter, unit
aggregation, threshold), so one materialized table serves any number of
slice requests.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from . import causal
from .errors import ConflictError, ValidationError
from .ops import group_aggregate, inner_join
from .predicate import TRUE, Predicate, and_, parse_predicate
from .table import Column, ColumnType, ColumnarTable

AGGREGATIONS = ("count", "sum", "mean", "min", "max")
THRESHOLD_COMPARATORS = ("eq", "ne", "lt", "le", "gt", "ge")

# the empty value a unit with no qualifying events receives
ZERO_FILLED = ("count", "sum")  # mean/min/max get null instead


@dataclass(frozen=True)
class MetricDefinition:
    name: str
    source: str
    unit_column: str
    aggregation: str
    value_column: str | None = None
    event_filter: Predicate = TRUE
    post_transform: tuple[str, float] | None = None  # (comparator, literal)
    statistics: tuple[str, ...] = ("descriptive", "t-test")
    display: Mapping = field(default_factory=dict)

    def to_doc(self) -> dict:
        doc = {
            "name": self.name,
            "source": self.source,
            "unit": self.unit_column,
            "aggregation": {"agg": self.aggregation},
            "statistics": list(self.statistics),
        }
        if self.value_column is not None:
            doc["aggregation"]["column"] = self.value_column
        if self.event_filter is not TRUE and self.event_filter.to_doc() is not True:
            doc["where"] = self.event_filter.canonical().to_doc()
        if self.post_transform is not None:
            doc["threshold"] = {"cmp": self.post_transform[0],
                                "value": self.post_transform[1]}
        if self.display:
            doc["display"] = dict(self.display)
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> MetricDefinition:
        for key in ("name", "source", "unit", "aggregation", "statistics"):
            if key not in doc:
                raise ValidationError(f"metric document missing field {key!r}")
        agg = doc["aggregation"]
        if not isinstance(agg, dict) or "agg" not in agg:
            raise ValidationError('aggregation must be {"agg": ..., "column"?: ...}')
        threshold = None
        if "threshold" in doc:
            th = doc["threshold"]
            if not isinstance(th, dict) or "cmp" not in th or "value" not in th:
                raise ValidationError('threshold must be {"cmp": ..., "value": ...}')
            threshold = (th["cmp"], th["value"])
        return cls(
            name=doc["name"], source=doc["source"], unit_column=doc["unit"],
            aggregation=agg["agg"], value_column=agg.get("column"),
            event_filter=parse_predicate(doc.get("where")),
            post_transform=threshold,
            statistics=tuple(doc["statistics"]),
            display=doc.get("display", {}))


def load_metric(path: str | Path) -> MetricDefinition:
    return MetricDefinition.from_doc(json.loads(Path(path).read_text(encoding="utf-8")))


def validate_metric(definition: MetricDefinition,
                    schema: dict[str, ColumnType]) -> list[str]:
    """Diagnostics for a definition against its source schema; empty means valid."""
    out: list[str] = []
    if not definition.name:
        out.append("metric name must be non-empty")
    if definition.unit_column not in schema:
        out.append(f"unit column {definition.unit_column!r} not in source schema")
    if definition.aggregation not in AGGREGATIONS:
        out.append(f"unknown aggregation {definition.aggregation!r}")
    col = definition.value_column
    if col is None:
        if definition.aggregation != "count":
            out.append(f"aggregation {definition.aggregation!r} requires a value column")
    elif col not in schema:
        out.append(f"value column {col!r} not in source schema")
    elif definition.aggregation in ("sum", "mean") and not schema[col].is_numeric:
        out.append(f"aggregation {definition.aggregation!r} needs a numeric column, "
                   f"{col!r} is {schema[col].value}")
    try:
        definition.event_filter.validate(schema)
    except ValidationError as err:
        out.append(f"event filter: {err.message}")
    known = causal.known_statistics()
    for stat in definition.statistics:
        if stat not in known:
            out.append(f"unknown statistic {stat!r} (registered: {', '.join(known)})")
    if definition.post_transform is not None:
        cmp, value = definition.post_transform
        if cmp not in THRESHOLD_COMPARATORS:
            out.append(f"unknown threshold comparator {cmp!r}")
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            out.append(f"threshold literal {value!r} must be numeric")
    if "proportion-test" in definition.statistics and definition.post_transform is None:
        out.append("proportion-test needs a boolean metric; add a threshold transform")
    return out


# -- registry ----------------------------------------------------------------


class MetricRegistry:
    """Append-only metric registry with a global, monotone version.

    Every registration bumps the registry version; (name, version) lookups
    resolve to the definition of that name as of that version, forever.
    Mutations are serialized behind a lock; reads work on immutable
    snapshots.
    """

    def __init__(self, schemas: Mapping[str, dict[str, ColumnType]] | None = None):
        self.schemas = dict(schemas or {})
        self._events: list[tuple[int, MetricDefinition]] = []
        self._lock = threading.Lock()

    @property
    def version(self) -> int:
        return self._events[-1][0] if self._events else 0

    def register(self, definition: MetricDefinition) -> int:
        schema = self.schemas.get(definition.source)
        if schema is None:
            raise ValidationError(
                f"unknown source table {definition.source!r}; known: "
                f"{sorted(self.schemas) or 'none'}")
        diagnostics = validate_metric(definition, schema)
        if diagnostics:
            raise ValidationError(
                f"metric {definition.name!r} failed validation: " + "; ".join(diagnostics))
        with self._lock:
            head = self._resolve_unlocked(definition.name, None)
            if head is not None and head.to_doc() == definition.to_doc():
                raise ConflictError(
                    f"metric {definition.name!r} already registered with this exact "
                    "definition")
            version = self.version + 1
            self._events.append((version, definition))
            return version

    def _resolve_unlocked(self, name: str, version: int | None):
        found = None
        for v, definition in self._events:
            if version is not None and v > version:
                break
            if definition.name == name:
                found = definition
        return found

    def resolve(self, name: str, version: int | None = None) -> MetricDefinition:
        found = self._resolve_unlocked(name, version)
        if found is None:
            at = f" at version {version}" if version is not None else ""
            raise ValidationError(f"no metric named {name!r}{at}")
        return found

    def snapshot(self, version: int | None = None) -> dict[str, MetricDefinition]:
        out: dict[str, MetricDefinition] = {}
        for v, definition in self._events:
            if version is not None and v > version:
                break
            out[definition.name] = definition
        return out

    # -- persistence -----------------------------------------------------

    def to_doc(self) -> dict:
        return {"version": self.version,
                "events": [{"version": v, "definition": d.to_doc()}
                           for v, d in self._events]}

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_doc(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path,
             schemas: Mapping[str, dict[str, ColumnType]] | None = None) -> MetricRegistry:
        reg = cls(schemas)
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        reg._events = [(e["version"], MetricDefinition.from_doc(e["definition"]))
                       for e in doc["events"]]
        return reg


# -- query plans ---------------------------------------------------------


@dataclass(frozen=True)
class JoinStep:
    table: str
    key: str


@dataclass(frozen=True)
class FilterStep:
    predicate: Predicate


@dataclass(frozen=True)
class AggregateStep:
    unit_column: str
    aggregation: str
    value_column: str | None


@dataclass(frozen=True)
class ThresholdStep:
    cmp: str
    value: float


SLICE_FILTER = FilterStep(TRUE)  # placeholder bound to the requested slice


@dataclass(frozen=True)
class QueryPlan:
    """phase1 is slice-independent; phase2 reruns per slice, join-free."""

    phase1: tuple
    phase2: tuple

    def describe(self) -> dict:
        def step_doc(step):
            if isinstance(step, JoinStep):
                return {"join": step.table, "key": step.key}
            if isinstance(step, FilterStep):
                return {"filter": "<slice>" if step is SLICE_FILTER
                        else step.predicate.canonical().to_doc()}
            if isinstance(step, AggregateStep):
                return {"group_by": step.unit_column, "agg": step.aggregation,
                        "column": step.value_column}
            return {"threshold": {"cmp": step.cmp, "value": step.value}}

        return {"phase1": [step_doc(s) for s in self.phase1],
                "phase2": [step_doc(s) for s in self.phase2]}


def compile_metric(definition: MetricDefinition,
                   enrichment: list[tuple[str, str]] = ()) -> QueryPlan:
    """Deterministic plan: joins and the metric filter up front, slicing later."""
    phase1: list = [JoinStep(table, key) for table, key in enrichment]
    if definition.event_filter.canonical() is not TRUE and \
            definition.event_filter.canonical().to_doc() is not True:
        phase1.append(FilterStep(definition.event_filter.canonical()))
    phase2: list = [SLICE_FILTER,
                    AggregateStep(definition.unit_column, definition.aggregation,
                                  definition.value_column)]
    if definition.post_transform is not None:
        phase2.append(ThresholdStep(*definition.post_transform))
    return QueryPlan(tuple(phase1), tuple(phase2))


# -- evaluation ---------------------------------------------------------


def evaluate_metric(definition: MetricDefinition, events: ColumnarTable,
                    allocations: ColumnarTable, slice_pred: Predicate = TRUE,
                    enrichments: Mapping[str, ColumnarTable] | None = None,
                    enrichment_keys: list[tuple[str, str]] = (),
                    cell_column: str = "cell") -> ColumnarTable:
    """Per-unit metric values: one output row per allocated unit.

    Units with no qualifying events get the aggregation's empty value
    (count/sum 0, mean/min/max null). The slice applies to the joined,
    enriched event rows before unit aggregation.
    """
    joined = join_events(definition.unit_column, events, allocations,
                         enrichments, enrichment_keys, cell_column)
    return aggregate_units(definition, joined, allocations, slice_pred, cell_column)


def join_events(unit_column: str, events: ColumnarTable, allocations: ColumnarTable,
                enrichments: Mapping[str, ColumnarTable] | None = None,
                enrichment_keys: list[tuple[str, str]] = (),
                cell_column: str = "cell") -> ColumnarTable:
    """Phase-1 joins: enrich events, then attach allocations (unit, cell)."""
    for col in (unit_column, cell_column):
        if not allocations.has_column(col):
            raise ValidationError(f"allocations table lacks column {col!r}")
    if not events.has_column(unit_column):
        raise ValidationError(
            f"events table lacks the unit column {unit_column!r}")
    units = allocations.column(unit_column)
    if len(np.unique(units.data[~units.null_mask])) != units.data[~units.null_mask].size:
        raise ValidationError("allocations must contain each unit exactly once")
    enriched = events
    for table_name, key in enrichment_keys:
        table = (enrichments or {}).get(table_name)
        if table is None:
            raise ValidationError(f"enrichment table {table_name!r} not provided")
        enriched = inner_join(enriched, table, key)
    return inner_join(allocations, enriched, unit_column, name="joined")


def aggregate_units(definition: MetricDefinition, joined: ColumnarTable,
                    allocations: ColumnarTable, slice_pred: Predicate = TRUE,
                    cell_column: str = "cell") -> ColumnarTable:
    """Phase-2: slice filter, per-unit aggregation, zero-fill, threshold."""
    pred = definition.event_filter if slice_pred is TRUE else \
        and_(definition.event_filter, slice_pred)
    pred.validate(joined.schema())
    mask = pred.evaluate(joined)
    rows = joined.take(np.flatnonzero(mask))

    agg_col = definition.value_column or definition.unit_column
    grouped = group_aggregate(rows, [definition.unit_column],
                              [(agg_col, definition.aggregation)])
    agg_out = f"{agg_col}_{definition.aggregation}"

    units = allocations.column(definition.unit_column)
    n = allocations.row_count
    values = np.zeros(n, dtype=np.float64)
    if definition.aggregation in ZERO_FILLED:
        nulls = np.zeros(n, dtype=bool)
    else:
        nulls = np.ones(n, dtype=bool)
    pos = _positions(units, grouped.column(definition.unit_column))
    got = grouped.column(agg_out)
    values[pos] = got.data.astype(np.float64)
    nulls[pos] = got.null_mask

    if definition.post_transform is not None:
        cmp, literal = definition.post_transform
        ops = {"eq": np.equal, "ne": np.not_equal, "lt": np.less,
               "le": np.less_equal, "gt": np.greater, "ge": np.greater_equal}
        values = ops[cmp](values, literal).astype(np.float64)
        value_col = Column("value", ColumnType.BOOLEAN, values.astype(np.bool_),
                           nulls if nulls.any() else None)
    else:
        value_col = Column("value", ColumnType.FLOAT64, values,
                           nulls if nulls.any() else None)
    return ColumnarTable(definition.name, [
        units, allocations.column(cell_column), value_col])


def _positions(all_units: Column, present: Column) -> np.ndarray:
    """Row index in the allocation table for each aggregated unit."""
    if all_units.ctype == ColumnType.CATEGORICAL:
        lookup = np.full(len(all_units.dictionary) + 1, -1, dtype=np.int64)
        lookup[all_units.data] = np.arange(len(all_units))
        mapping = {v: i for i, v in enumerate(all_units.dictionary)}
        codes = np.array([mapping[present.dictionary[c]] for c in present.data],
                         dtype=np.int64)
        return lookup[codes]
    order = np.argsort(all_units.data, kind="stable")
    sorted_vals = all_units.data[order]
    idx = np.searchsorted(sorted_vals, present.data)
    return order[idx]


def execute_plan(plan: QueryPlan, definition: MetricDefinition, events: ColumnarTable,
                 allocations: ColumnarTable, slice_pred: Predicate = TRUE,
                 enrichments: Mapping[str, ColumnarTable] | None = None,
                 cell_column: str = "cell") -> ColumnarTable:
    """Run phase1 then phase2; equivalent to evaluate_metric run monolithically."""
    phase1_table = run_phase1(plan, definition, events, allocations, enrichments,
                              cell_column)
    return run_phase2(plan, definition, phase1_table, allocations, slice_pred,
                      cell_column)


def run_phase1(plan: QueryPlan, definition: MetricDefinition, events: ColumnarTable,
               allocations: ColumnarTable,
               enrichments: Mapping[str, ColumnarTable] | None = None,
               cell_column: str = "cell") -> ColumnarTable:
    keys = [(s.table, s.key) for s in plan.phase1 if isinstance(s, JoinStep)]
    table = join_events(definition.unit_column, events, allocations, enrichments,
                        keys, cell_column)
    for step in plan.phase1:
        if isinstance(step, FilterStep) and step is not SLICE_FILTER:
            step.predicate.validate(table.schema())
            table = table.take(np.flatnonzero(step.predicate.evaluate(table)))
    return table


def run_phase2(plan: QueryPlan, definition: MetricDefinition,
               phase1_table: ColumnarTable, allocations: ColumnarTable,
               slice_pred: Predicate = TRUE, cell_column: str = "cell") -> ColumnarTable:
    # the phase-1 table already carries the metric filter, so only the slice
    # and the aggregation steps remain
    stripped = MetricDefinition(
        name=definition.name, source=definition.source,
        unit_column=definition.unit_column, aggregation=definition.aggregation,
        value_column=definition.value_column, event_filter=TRUE,
        post_transform=definition.post_transform, statistics=definition.statistics,
        display=definition.display)
    return aggregate_units(stripped, phase1_table, allocations, slice_pred, cell_column)
