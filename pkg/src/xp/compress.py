"""Sufficient-statistics compression of unit-level data.

Unit rows are collapsed into one group per distinct (covariates, cell,
time bucket) key; each group keeps count, mean, and M2 (sum of squared
deviations from the group mean) per metric. Linear models fit on these
groups reproduce the raw-data fit exactly when all covariates are
categorical, which is what makes the compression lossless for them.

Accumulation is chunked: per-chunk moments are combined with the standard
pairwise update (n, mean, M2), the same formula :func:`merge` uses to fold
partial datasets from concurrent workers.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .ops import combine_codes
from .table import Column, ColumnType, ColumnarTable

CHUNK_ROWS = 1 << 18
SECONDS_PER = {"day": 86400, "hour": 3600, "week": 7 * 86400}

# Dictionary level used for null covariate cells; cannot collide with a real
# category because the empty string is the CSV null sentinel.
NULL_LEVEL = ""


@dataclass(frozen=True)
class KeyField:
    """One component of the group key."""

    name: str
    kind: str  # "categorical" | "cell" | "binned" | "time"
    dictionary: tuple[str, ...] = ()
    edges: tuple[float, ...] = ()
    granularity: str = ""

    def label(self, code: int) -> str:
        if self.kind in ("categorical", "cell"):
            return self.dictionary[code]
        if self.kind == "binned":
            return f"bin{code}"
        return str(code)


@dataclass(frozen=True)
class BinningSpec:
    """Interior cut points per continuous covariate; strictly increasing."""

    edges: dict[str, tuple[float, ...]]

    def __post_init__(self):
        for col, cuts in self.edges.items():
            arr = np.asarray(cuts)
            if len(arr) and not np.all(np.diff(arr) > 0):
                raise ValidationError(f"bin edges for {col!r} must be strictly increasing")

    def bin_codes(self, col: str, values: np.ndarray) -> np.ndarray:
        return np.searchsorted(np.asarray(self.edges[col]), values, side="right")

    def bin_count(self, col: str) -> int:
        return len(self.edges[col]) + 1


def build_binning(table: ColumnarTable, columns: list[str], bins: int = 20) -> BinningSpec:
    """Quantile-based edges computed on the pooled distribution of each column."""
    edges = {}
    for name in columns:
        col = table.column(name)
        if not col.ctype.is_numeric:
            raise ValidationError(f"cannot bin non-numeric column {name!r}")
        values = col.data[~col.null_mask].astype(np.float64)
        if values.size == 0:
            edges[name] = ()
            continue
        qs = np.quantile(values, np.linspace(0.0, 1.0, bins + 1)[1:-1])
        edges[name] = tuple(np.unique(qs).tolist())
    return BinningSpec(edges)


class CompressedDataset:
    """Groups of sufficient statistics; immutable once built."""

    def __init__(self, key_fields: tuple[KeyField, ...], keys: np.ndarray,
                 metric_names: tuple[str, ...], counts: np.ndarray,
                 means: np.ndarray, m2: np.ndarray, total_rows: int):
        self.key_fields = key_fields
        self.keys = keys  # (G, K) int64 codes
        self.metric_names = metric_names
        self.counts = counts  # (G,)
        self.means = means  # (G, M)
        self.m2 = m2  # (G, M)
        self.total_rows = total_rows

    @property
    def group_count(self) -> int:
        return len(self.counts)

    def field_index(self, name: str) -> int:
        for i, f in enumerate(self.key_fields):
            if f.name == name:
                return i
        raise ValidationError(f"no key field {name!r} in compressed dataset")

    def metric_index(self, name: str) -> int:
        try:
            return self.metric_names.index(name)
        except ValueError:
            raise ValidationError(f"no metric {name!r} in compressed dataset") from None

    def field_codes(self, name: str) -> np.ndarray:
        return self.keys[:, self.field_index(name)]

    def cell_field(self) -> KeyField:
        for f in self.key_fields:
            if f.kind == "cell":
                return f
        raise ValidationError("compressed dataset has no treatment cell field")

    def validate(self):
        if self.group_count:
            if int(self.counts.min()) < 1:
                raise ValidationError("group with count < 1")
            if float(self.m2.min()) < 0:
                raise ValidationError("negative m2")
            singletons = self.counts == 1
            if singletons.any() and np.abs(self.m2[singletons]).max() > 0:
                raise ValidationError("m2 must be 0 for singleton groups")
        if int(self.counts.sum()) != self.total_rows:
            raise ValidationError("group counts do not sum to total rows")

    def pooled_moments(self, metric: str, mask: np.ndarray | None = None
                       ) -> tuple[int, float, float]:
        """Fold a subset of groups into one (n, mean, m2) triple."""
        m = self.metric_index(metric)
        sel = slice(None) if mask is None else mask
        n = self.counts[sel]
        means = self.means[sel, m]
        m2 = self.m2[sel, m]
        total = int(n.sum())
        if total == 0:
            return 0, 0.0, 0.0
        grand = float(np.dot(n, means) / total)
        spread = float(np.dot(n, (means - grand) ** 2))
        return total, grand, float(m2.sum() + spread)


def _merge_moments(na, ma, m2a, nb, mb, m2b):
    """Pairwise combination of (count, mean, M2); broadcasts over arrays."""
    n = na + nb
    safe = np.where(n > 0, n, 1)
    delta = mb - ma
    mean = ma + delta * (nb / safe)
    m2 = m2a + m2b + delta * delta * (na * nb / safe)
    mean = np.where(n > 0, mean, 0.0)
    m2 = np.where(n > 0, np.maximum(m2, 0.0), 0.0)
    return n, mean, m2


def _grouped_moments(inverse: np.ndarray, n_groups: int, values: np.ndarray
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(count, mean, M2) per group for one chunk of rows."""
    counts = np.bincount(inverse, minlength=n_groups).astype(np.float64)
    sums = np.bincount(inverse, weights=values, minlength=n_groups)
    means = np.divide(sums, counts, out=np.zeros(n_groups), where=counts > 0)
    dev = values - means[inverse]
    m2 = np.bincount(inverse, weights=dev * dev, minlength=n_groups)
    return counts, means, m2


def compress(units: ColumnarTable, metrics: list[str], treatment: str,
             covariates: list[str], time: str | None = None,
             binning: BinningSpec | None = None,
             time_granularity: str = "day") -> CompressedDataset:
    """Collapse unit rows into per-(covariates, cell, time-bucket) groups.

    Metric columns must be numeric and non-null. Continuous covariates
    need ``binning``; categorical and boolean covariates are lossless.
    """
    for name in metrics:
        col = units.column(name)
        if not col.ctype.is_numeric:
            raise ValidationError(f"metric column {name!r} is not numeric")
        if col.nulls is not None:
            raise ValidationError(
                f"metric column {name!r} has nulls; drop or fill them before compressing")

    code_arrays: list[np.ndarray] = []
    sizes: list[int] = []
    fields: list[KeyField] = []
    for name in covariates:
        codes, size, fld = _covariate_codes(units, name, binning)
        code_arrays.append(codes)
        sizes.append(size)
        fields.append(fld)

    cell_col = units.column(treatment)
    if cell_col.ctype != ColumnType.CATEGORICAL:
        raise ValidationError(f"treatment column {treatment!r} must be categorical")
    if cell_col.nulls is not None:
        raise ValidationError(f"treatment column {treatment!r} has null cells")
    code_arrays.append(cell_col.data.astype(np.int64))
    sizes.append(max(len(cell_col.dictionary), 1))
    fields.append(KeyField(treatment, "cell", dictionary=cell_col.dictionary))

    if time is not None:
        tcol = units.column(time)
        if tcol.ctype not in (ColumnType.TIMESTAMP, ColumnType.INT64):
            raise ValidationError(f"time column {time!r} must be timestamp or int64")
        if tcol.nulls is not None:
            raise ValidationError(f"time column {time!r} has nulls")
        if time_granularity not in SECONDS_PER:
            raise ValidationError(f"unknown time granularity {time_granularity!r}")
        buckets = np.floor_divide(tcol.data, SECONDS_PER[time_granularity]) \
            if tcol.ctype == ColumnType.TIMESTAMP else tcol.data.astype(np.int64)
        offset = int(buckets.min()) if len(buckets) else 0
        code_arrays.append(buckets - offset)
        sizes.append(int(buckets.max()) - offset + 1 if len(buckets) else 1)
        fields.append(KeyField(time, "time", granularity=time_granularity))
        time_offset = offset
    else:
        time_offset = 0

    combined = combine_codes(code_arrays, sizes)
    uniq, first_pos, inverse = np.unique(combined, return_index=True, return_inverse=True)
    n_groups = len(uniq)
    keys = np.stack([arr[first_pos] for arr in code_arrays], axis=1) if n_groups else \
        np.zeros((0, len(code_arrays)), dtype=np.int64)
    if time is not None and n_groups:
        keys[:, -1] += time_offset
    # np.unique sorts the mixed-radix key, so groups are already ordered by
    # code tuple.

    m = len(metrics)
    counts = np.zeros(n_groups, dtype=np.float64)
    means = np.zeros((n_groups, m), dtype=np.float64)
    m2 = np.zeros((n_groups, m), dtype=np.float64)
    values = [units.column(name).data.astype(np.float64) for name in metrics]
    for start in range(0, units.row_count, CHUNK_ROWS):
        stop = min(start + CHUNK_ROWS, units.row_count)
        inv = inverse[start:stop]
        chunk_counts = None
        for j in range(m):
            cn, cm, cm2 = _grouped_moments(inv, n_groups, values[j][start:stop])
            _, means[:, j], m2[:, j] = _merge_moments(
                counts, means[:, j], m2[:, j], cn, cm, cm2)
            chunk_counts = cn
        if chunk_counts is not None:
            counts += chunk_counts
        elif m == 0:
            counts += np.bincount(inv, minlength=n_groups)

    out = CompressedDataset(tuple(fields), keys, tuple(metrics),
                            counts.astype(np.int64), means, m2, units.row_count)
    out.validate()
    return out


def _covariate_codes(units: ColumnarTable, name: str, binning: BinningSpec | None
                     ) -> tuple[np.ndarray, int, KeyField]:
    col = units.column(name)
    if col.ctype == ColumnType.CATEGORICAL:
        codes = col.data.astype(np.int64)
        dictionary = col.dictionary
        if col.nulls is not None:
            dictionary = dictionary + (NULL_LEVEL,)
            codes = codes.copy()
            codes[col.nulls] = len(col.dictionary)
        return codes, max(len(dictionary), 1), KeyField(name, "categorical",
                                                        dictionary=dictionary)
    if col.ctype == ColumnType.BOOLEAN:
        if col.nulls is not None:
            raise ValidationError(f"boolean covariate {name!r} has nulls")
        return col.data.astype(np.int64), 2, KeyField(name, "categorical",
                                                      dictionary=("false", "true"))
    if binning is None or name not in binning.edges:
        raise ValidationError(
            f"continuous covariate {name!r} requires a binning spec "
            "(lossless compression needs categorical covariates)")
    if col.nulls is not None:
        raise ValidationError(f"binned covariate {name!r} has nulls")
    codes = binning.bin_codes(name, col.data.astype(np.float64)).astype(np.int64)
    return codes, binning.bin_count(name), KeyField(name, "binned",
                                                    edges=tuple(binning.edges[name]))


def merge(a: CompressedDataset, b: CompressedDataset) -> CompressedDataset:
    """Combine two compressed datasets with identical key schemas.

    Dictionaries may differ (partitions see different category subsets);
    codes are remapped onto the union before groups are matched.
    """
    if a.metric_names != b.metric_names:
        raise ValidationError("cannot merge: metric names differ")
    if len(a.key_fields) != len(b.key_fields):
        raise ValidationError("cannot merge: key schemas differ")
    fields: list[KeyField] = []
    b_remaps: list[np.ndarray | None] = []
    for fa, fb in zip(a.key_fields, b.key_fields):
        if (fa.name, fa.kind, fa.edges, fa.granularity) != \
                (fb.name, fb.kind, fb.edges, fb.granularity):
            raise ValidationError(
                f"cannot merge: key field {fa.name!r} differs between datasets")
        if fa.kind in ("categorical", "cell") and fa.dictionary != fb.dictionary:
            union = list(fa.dictionary)
            index = {v: i for i, v in enumerate(union)}
            remap = np.empty(len(fb.dictionary), dtype=np.int64)
            for i, v in enumerate(fb.dictionary):
                if v not in index:
                    index[v] = len(union)
                    union.append(v)
                remap[i] = index[v]
            fields.append(KeyField(fa.name, fa.kind, dictionary=tuple(union)))
            b_remaps.append(remap)
        else:
            fields.append(fa)
            b_remaps.append(None)

    b_keys = b.keys.copy()
    for j, remap in enumerate(b_remaps):
        if remap is not None and len(b_keys):
            b_keys[:, j] = remap[b_keys[:, j]]

    index: dict[tuple, int] = {}
    rows: list[tuple] = []
    n_list: list[float] = []
    mean_list: list[np.ndarray] = []
    m2_list: list[np.ndarray] = []
    for src_keys, src in ((a.keys, a), (b_keys, b)):
        for g in range(src.group_count):
            key = tuple(int(v) for v in src_keys[g])
            at = index.get(key)
            if at is None:
                index[key] = len(rows)
                rows.append(key)
                n_list.append(float(src.counts[g]))
                mean_list.append(src.means[g].copy())
                m2_list.append(src.m2[g].copy())
            else:
                n, mean, m2v = _merge_moments(
                    n_list[at], mean_list[at], m2_list[at],
                    float(src.counts[g]), src.means[g], src.m2[g])
                n_list[at] = n
                mean_list[at] = mean
                m2_list[at] = m2v

    order = sorted(range(len(rows)), key=lambda i: rows[i])
    keys = np.array([rows[i] for i in order], dtype=np.int64) if rows else \
        np.zeros((0, len(fields)), dtype=np.int64)
    counts = np.array([n_list[i] for i in order], dtype=np.int64)
    means = np.array([mean_list[i] for i in order], dtype=np.float64) \
        if rows else np.zeros((0, len(a.metric_names)))
    m2 = np.array([m2_list[i] for i in order], dtype=np.float64) \
        if rows else np.zeros((0, len(a.metric_names)))
    out = CompressedDataset(tuple(fields), keys, a.metric_names, counts, means, m2,
                            a.total_rows + b.total_rows)
    out.validate()
    return out


def compression_ratio(c: CompressedDataset) -> float:
    """Input rows per group; 100 rows in 1 group compresses 100x."""
    if c.group_count == 0:
        return 0.0
    return c.total_rows / c.group_count


def empty_like(c: CompressedDataset) -> CompressedDataset:
    return CompressedDataset(c.key_fields, np.zeros((0, len(c.key_fields)), dtype=np.int64),
                             c.metric_names, np.zeros(0, dtype=np.int64),
                             np.zeros((0, len(c.metric_names))),
                             np.zeros((0, len(c.metric_names))), 0)


# -- persistence: one CSV row per group x metric, schema in a sidecar ------


def save_compressed(c: CompressedDataset, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f.name for f in c.key_fields] + ["metric", "n", "mean", "m2"])
    for g in range(c.group_count):
        key_cells = [str(int(v)) for v in c.keys[g]]
        for j, metric in enumerate(c.metric_names):
            writer.writerow(key_cells + [metric, str(int(c.counts[g])),
                                         repr(float(c.means[g, j])),
                                         repr(float(c.m2[g, j]))])
    path.write_text(buf.getvalue(), encoding="utf-8")
    meta = {
        "key_fields": [{"name": f.name, "kind": f.kind, "dictionary": list(f.dictionary),
                        "edges": list(f.edges), "granularity": f.granularity}
                       for f in c.key_fields],
        "metric_names": list(c.metric_names),
        "total_rows": c.total_rows,
    }
    meta_path = path.with_name(path.name + ".meta.json")
    meta_path.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return path


def load_compressed(path: str | Path) -> CompressedDataset:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".meta.json").read_text(encoding="utf-8"))
    fields = tuple(KeyField(f["name"], f["kind"], tuple(f["dictionary"]),
                            tuple(f["edges"]), f["granularity"])
                   for f in meta["key_fields"])
    metric_names = tuple(meta["metric_names"])
    key_rows: list[list[int]] = []
    stats: dict[int, dict[str, tuple[int, float, float]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        k = len(fields)
        assert header[:k] == [f.name for f in fields]
        seen: dict[tuple, int] = {}
        for row in reader:
            key = tuple(int(v) for v in row[:k])
            g = seen.get(key)
            if g is None:
                g = len(key_rows)
                seen[key] = g
                key_rows.append(list(key))
                stats[g] = {}
            stats[g][row[k]] = (int(row[k + 1]), float(row[k + 2]), float(row[k + 3]))
    n_groups = len(key_rows)
    keys = np.array(key_rows, dtype=np.int64).reshape(n_groups, len(fields))
    counts = np.zeros(n_groups, dtype=np.int64)
    means = np.zeros((n_groups, len(metric_names)))
    m2 = np.zeros((n_groups, len(metric_names)))
    for g in range(n_groups):
        for j, name in enumerate(metric_names):
            n, mean, m2v = stats[g][name]
            counts[g] = n
            means[g, j] = mean
            m2[g, j] = m2v
    out = CompressedDataset(fields, keys, metric_names, counts, means, m2,
                            meta["total_rows"])
    out.validate()
    return out
