"""Shared types for causal effect models.

``AnalysisSpec`` names the statistical variables of an analysis: the metric
(y), the treatment contrast (X with a designated control and treatment
cell), covariates (W), an optional time column (t), and model options
(theta). ``ModelData`` normalizes raw unit-level tables and compressed
group datasets into the one shape models fit on: value/weight vectors plus
coded covariates, where a compressed group is a weighted pseudo-row.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import date
from typing import Mapping

import numpy as np

from ..compress import SECONDS_PER, CompressedDataset
from ..errors import CapabilityError, ValidationError
from ..predicate import Predicate
from ..table import Column, ColumnType, ColumnarTable

DEFAULT_THETA = {
    "ci_level": 0.95,
    "bootstrap_b": 1000,
    "variance": "welch",  # standalone two-sample tests default to unequal variances
    "robust": False,
    "quantile_q": 0.5,
}


@dataclass(frozen=True)
class AnalysisSpec:
    """The five statistical variables describing one analysis."""

    metric: str
    treatment_column: str
    control: str
    treatment: str
    covariates: tuple[str, ...] = ()
    time_column: str | None = None
    time_granularity: str = "day"
    interactions: tuple[str, ...] = ()  # covariates interacted with treatment
    theta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.control == self.treatment:
            raise ValidationError("control and treatment cells must differ")
        level = self.option("ci_level")
        if not 0.0 < level < 1.0:
            raise ValidationError(f"ci_level must be in (0, 1), got {level}")

    def option(self, key: str, default=None):
        if key in self.theta:
            return self.theta[key]
        if default is not None:
            return default
        return DEFAULT_THETA.get(key)

    @property
    def ci_level(self) -> float:
        return float(self.option("ci_level"))


@dataclass(frozen=True)
class TreatmentEffect:
    """One estimated effect: point estimate, uncertainty, and provenance."""

    kind: str  # "ate" | "cate" | "dte"
    estimate: float
    variance: float
    ci_low: float
    ci_high: float
    ci_level: float
    p_value: float
    method: str
    n_control: int
    n_treatment: int
    label: str | None = None
    extras: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.variance < 0:
            raise ValidationError(f"negative effect variance: {self.variance}")
        if not 0.0 <= self.p_value <= 1.0 + 1e-12:
            raise ValidationError(f"p-value out of range: {self.p_value}")
        if not self.ci_low <= self.estimate <= self.ci_high:
            raise ValidationError(
                f"estimate {self.estimate} outside CI ({self.ci_low}, {self.ci_high})")

    def to_doc(self) -> dict:
        doc = {
            "kind": self.kind,
            "estimate": self.estimate,
            "variance": self.variance,
            "ci": [self.ci_low, self.ci_high],
            "ci_level": self.ci_level,
            "p_value": self.p_value,
            "method": self.method,
            "n_control": self.n_control,
            "n_treatment": self.n_treatment,
        }
        if self.label is not None:
            doc["label"] = self.label
        if self.extras:
            doc["extras"] = dict(self.extras)
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> TreatmentEffect:
        return cls(kind=doc["kind"], estimate=doc["estimate"], variance=doc["variance"],
                   ci_low=doc["ci"][0], ci_high=doc["ci"][1], ci_level=doc["ci_level"],
                   p_value=doc["p_value"], method=doc["method"],
                   n_control=doc["n_control"], n_treatment=doc["n_treatment"],
                   label=doc.get("label"), extras=doc.get("extras", {}))


QUANTILE_POINTS = (0.25, 0.5, 0.75, 0.95)


@dataclass(frozen=True)
class CellSummary:
    count: int
    mean: float
    variance: float
    minimum: float | None = None
    maximum: float | None = None
    quantiles: tuple[float, ...] | None = None  # at QUANTILE_POINTS

    def __post_init__(self):
        if self.quantiles is not None:
            qs = list(self.quantiles)
            if sorted(qs) != qs:
                raise ValidationError("quantiles must be non-decreasing")

    def to_doc(self) -> dict:
        doc = {"count": self.count, "mean": self.mean, "variance": self.variance}
        if self.minimum is not None:
            doc["min"] = self.minimum
            doc["max"] = self.maximum
        if self.quantiles is not None:
            doc["quantiles"] = {str(q): v for q, v in zip(QUANTILE_POINTS, self.quantiles)}
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> CellSummary:
        quantiles = None
        if "quantiles" in doc:
            quantiles = tuple(doc["quantiles"][str(q)] for q in QUANTILE_POINTS)
        return cls(count=doc["count"], mean=doc["mean"], variance=doc["variance"],
                   minimum=doc.get("min"), maximum=doc.get("max"), quantiles=quantiles)


@dataclass(frozen=True)
class SummaryStatistics:
    cells: Mapping[str, CellSummary]

    def to_doc(self) -> dict:
        return {label: cell.to_doc() for label, cell in sorted(self.cells.items())}

    @classmethod
    def from_doc(cls, doc: dict) -> SummaryStatistics:
        return cls({label: CellSummary.from_doc(c) for label, c in doc.items()})


@dataclass
class FittedModel:
    kind: str
    beta: np.ndarray
    covariance: np.ndarray
    sigma2: float
    dof: int
    n_obs: int
    n_control: int
    n_treatment: int
    coefficients: tuple[str, ...]  # column -> coefficient mapping
    design: object | None = None  # model-specific design metadata

    def __post_init__(self):
        asym = np.abs(self.covariance - self.covariance.T)
        if asym.size and asym.max() > 1e-8 * max(1.0, float(np.abs(self.covariance).max())):
            raise ValidationError("coefficient covariance is not symmetric")
        if self.dof <= 0:
            raise ValidationError(f"non-positive degrees of freedom: {self.dof}")


# -- unified model input ----------------------------------------------------


@dataclass
class ModelData:
    """Rows are units (raw) or groups (compressed pseudo-rows)."""

    y: np.ndarray  # unit values, or group means
    weights: np.ndarray  # 1s, or group counts
    m2: np.ndarray  # 0s, or group M2
    treat: np.ndarray  # bool: row belongs to the treatment cell
    covariates: dict[str, tuple[np.ndarray, tuple[str, ...]]]  # codes, levels
    numeric_covariates: dict[str, np.ndarray]
    time: np.ndarray | None  # bucket ids
    from_compressed: bool

    @property
    def n_rows(self) -> int:
        return len(self.y)

    @property
    def n_units(self) -> int:
        return int(self.weights.sum())

    @property
    def n_control(self) -> int:
        return int(self.weights[~self.treat].sum())

    @property
    def n_treatment(self) -> int:
        return int(self.weights[self.treat].sum())

    def with_treatment(self, x: int) -> ModelData:
        """The potential-outcome copy: every row forced to X = x."""
        return replace(self, treat=np.full(self.n_rows, bool(x)))

    def take(self, index: np.ndarray) -> ModelData:
        return replace(
            self,
            y=self.y[index], weights=self.weights[index], m2=self.m2[index],
            treat=self.treat[index],
            covariates={k: (codes[index], levels)
                        for k, (codes, levels) in self.covariates.items()},
            numeric_covariates={k: v[index] for k, v in self.numeric_covariates.items()},
            time=self.time[index] if self.time is not None else None)

    def cell_moments(self, treat: bool) -> tuple[int, float, float]:
        """Pooled (n, mean, m2) for one cell."""
        mask = self.treat == treat
        n = float(self.weights[mask].sum())
        if n == 0:
            return 0, 0.0, 0.0
        mean = float(np.dot(self.weights[mask], self.y[mask]) / n)
        spread = float(np.dot(self.weights[mask], (self.y[mask] - mean) ** 2))
        return int(n), mean, float(self.m2[mask].sum() + spread)

    def unit_values(self, treat: bool) -> np.ndarray:
        if self.from_compressed:
            raise CapabilityError(
                "unit-level values are not recoverable from compressed data")
        return self.y[self.treat == treat]

    def covariate_table(self) -> ColumnarTable:
        """Covariates as a table so slice predicates can address segments."""
        cols = []
        for name, (codes, levels) in self.covariates.items():
            cols.append(Column(name, ColumnType.CATEGORICAL,
                               codes.astype(np.int32), None, tuple(levels)))
        for name, values in self.numeric_covariates.items():
            cols.append(Column(name, ColumnType.FLOAT64, values))
        return ColumnarTable("covariates", cols)

    def segment_mask(self, segment: Predicate) -> np.ndarray:
        tbl = self.covariate_table()
        segment.validate(tbl.schema())
        return segment.evaluate(tbl)


def bucket_label(bucket: int, granularity: str) -> str:
    if granularity == "day":
        return date.fromtimestamp(bucket * SECONDS_PER["day"]).isoformat()
    return str(bucket)


def model_data(spec: AnalysisSpec, data) -> ModelData:
    if isinstance(data, CompressedDataset):
        return _from_compressed(spec, data)
    if isinstance(data, ColumnarTable):
        return _from_table(spec, data)
    raise ValidationError(f"unsupported dataset type {type(data).__name__}")


def _from_table(spec: AnalysisSpec, table: ColumnarTable) -> ModelData:
    cell = table.column(spec.treatment_column)
    if cell.ctype != ColumnType.CATEGORICAL:
        raise ValidationError(
            f"treatment column {spec.treatment_column!r} must be categorical")
    labels = {v: i for i, v in enumerate(cell.dictionary)}
    missing = [lab for lab in (spec.control, spec.treatment) if lab not in labels]
    if missing:
        raise ValidationError(f"cells {missing} absent from treatment column")
    ycol = table.column(spec.metric)
    if not ycol.ctype.is_numeric:
        raise ValidationError(f"metric column {spec.metric!r} is not numeric")

    keep = ((cell.data == labels[spec.control]) |
            (cell.data == labels[spec.treatment])) & ~cell.null_mask & ~ycol.null_mask
    idx = np.flatnonzero(keep)
    treat = cell.data[idx] == labels[spec.treatment]

    covariates = {}
    numeric = {}
    for name in spec.covariates:
        col = table.column(name)
        if col.ctype == ColumnType.CATEGORICAL:
            if col.nulls is not None and col.null_mask[idx].any():
                raise ValidationError(f"covariate {name!r} has null values")
            covariates[name] = (col.data[idx].astype(np.int64), col.dictionary)
        elif col.ctype == ColumnType.BOOLEAN:
            covariates[name] = (col.data[idx].astype(np.int64), ("false", "true"))
        elif col.ctype.is_numeric:
            if col.nulls is not None and col.null_mask[idx].any():
                raise ValidationError(f"covariate {name!r} has null values")
            numeric[name] = col.data[idx].astype(np.float64)
        else:
            raise ValidationError(f"unsupported covariate type for {name!r}")

    time = None
    if spec.time_column is not None:
        tcol = table.column(spec.time_column)
        if tcol.ctype == ColumnType.TIMESTAMP:
            time = np.floor_divide(tcol.data[idx], SECONDS_PER[spec.time_granularity])
        elif tcol.ctype == ColumnType.INT64:
            time = tcol.data[idx].astype(np.int64)
        else:
            raise ValidationError(f"time column {spec.time_column!r} must be timestamp")

    n = len(idx)
    return ModelData(
        y=ycol.data[idx].astype(np.float64),
        weights=np.ones(n), m2=np.zeros(n), treat=treat,
        covariates=covariates, numeric_covariates=numeric, time=time,
        from_compressed=False)


def _from_compressed(spec: AnalysisSpec, c: CompressedDataset) -> ModelData:
    cell_field = c.cell_field()
    if cell_field.name != spec.treatment_column:
        raise ValidationError(
            f"compressed dataset keyed by cell column {cell_field.name!r}, "
            f"spec uses {spec.treatment_column!r}")
    labels = {v: i for i, v in enumerate(cell_field.dictionary)}
    missing = [lab for lab in (spec.control, spec.treatment) if lab not in labels]
    if missing:
        raise ValidationError(f"cells {missing} absent from compressed dataset")
    cell_codes = c.field_codes(spec.treatment_column)
    keep = (cell_codes == labels[spec.control]) | (cell_codes == labels[spec.treatment])
    idx = np.flatnonzero(keep)
    m = c.metric_index(spec.metric)

    covariates = {}
    for name in spec.covariates:
        fld = c.key_fields[c.field_index(name)]
        codes = c.field_codes(name)[idx]
        if fld.kind == "categorical":
            covariates[name] = (codes.astype(np.int64), fld.dictionary)
        elif fld.kind == "binned":
            levels = tuple(f"bin{i}" for i in range(len(fld.edges) + 1))
            covariates[name] = (codes.astype(np.int64), levels)
        else:
            raise ValidationError(f"key field {name!r} cannot be used as a covariate")

    time = None
    if spec.time_column is not None:
        fld = c.key_fields[c.field_index(spec.time_column)]
        if fld.kind != "time":
            raise ValidationError(f"{spec.time_column!r} is not a time key field")
        time = c.field_codes(spec.time_column)[idx].astype(np.int64)

    return ModelData(
        y=c.means[idx, m].copy(),
        weights=c.counts[idx].astype(np.float64),
        m2=c.m2[idx, m].copy(),
        treat=cell_codes[idx] == labels[spec.treatment],
        covariates=covariates, numeric_covariates={}, time=time,
        from_compressed=True)


# -- model registry ----------------------------------------------------------

_MODELS: dict[str, object] = {}


def register_model(name: str, model) -> None:
    _MODELS[name] = model


def resolve_model(name: str):
    model = _MODELS.get(name)
    if model is None:
        raise ValidationError(f"unknown model {name!r}; registered: {sorted(_MODELS)}")
    return model


def model_names() -> list[str]:
    return sorted(_MODELS)
