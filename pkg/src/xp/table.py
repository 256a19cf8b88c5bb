"""In-memory columnar tables with CSV ingestion.

Tables are immutable after construction: every operation returns a new
table, so they are safe to share across worker threads. Strings are
dictionary-encoded on load because slicing and grouping on categories
dominate the workload.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

# Tables must fit in memory; this is the documented default cap.
DEFAULT_MEMORY_CAP = 4 * 1024**3

NULL_CODE = -1  # categorical code used for null cells


class ColumnType(str, Enum):
    BOOLEAN = "boolean"
    INT64 = "int64"
    FLOAT64 = "float64"
    CATEGORICAL = "categorical"
    TIMESTAMP = "timestamp"  # integer epoch seconds

    @property
    def is_numeric(self) -> bool:
        return self in (ColumnType.INT64, ColumnType.FLOAT64, ColumnType.BOOLEAN)


_NUMPY_DTYPE = {
    ColumnType.BOOLEAN: np.bool_,
    ColumnType.INT64: np.int64,
    ColumnType.FLOAT64: np.float64,
    ColumnType.CATEGORICAL: np.int32,  # dictionary codes
    ColumnType.TIMESTAMP: np.int64,
}


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    raise ValueError(s)


def _parse_int(s: str) -> int:
    v = int(s)
    if not -(2**63) <= v < 2**63:
        raise ValueError(f"out of int64 range: {s}")
    return v


def _parse_float(s: str) -> float:
    v = float(s)
    if not np.isfinite(v):
        raise ValueError(f"non-finite value: {s}")
    return v


def _parse_timestamp(s: str) -> int:
    """ISO-8601 (or raw epoch seconds) to integer epoch seconds, UTC."""
    try:
        return _parse_int(s)
    except ValueError:
        pass
    text = s.replace("Z", "+00:00") if s.endswith("Z") else s
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


_PARSERS = {
    ColumnType.BOOLEAN: _parse_bool,
    ColumnType.INT64: _parse_int,
    ColumnType.FLOAT64: _parse_float,
    ColumnType.TIMESTAMP: _parse_timestamp,
}

# Inference tries these in order; first type that parses every non-null cell wins.
_INFERENCE_ORDER = (
    ColumnType.BOOLEAN,
    ColumnType.INT64,
    ColumnType.FLOAT64,
    ColumnType.TIMESTAMP,
)


@dataclass(frozen=True)
class Column:
    """One typed column: a value vector plus an optional null mask.

    Categorical columns hold int32 codes into ``dictionary``; null cells use
    code -1 and are flagged in ``nulls``.
    """

    name: str
    ctype: ColumnType
    data: np.ndarray
    nulls: np.ndarray | None = None  # bool mask, True where null
    dictionary: tuple[str, ...] = ()

    def __post_init__(self):
        expected = _NUMPY_DTYPE[self.ctype]
        if self.data.dtype != expected:
            object.__setattr__(self, "data", self.data.astype(expected))
        if self.nulls is not None and not self.nulls.any():
            object.__setattr__(self, "nulls", None)

    def __len__(self) -> int:
        return len(self.data)

    @property
    def null_mask(self) -> np.ndarray:
        if self.nulls is None:
            return np.zeros(len(self.data), dtype=bool)
        return self.nulls

    def validate(self):
        if self.ctype == ColumnType.CATEGORICAL:
            valid = self.data[~self.null_mask]
            if valid.size and (valid.min() < 0 or valid.max() >= len(self.dictionary)):
                raise ValidationError(f"column {self.name!r}: categorical code out of range")

    def take(self, index: np.ndarray) -> Column:
        nulls = self.nulls[index] if self.nulls is not None else None
        return Column(self.name, self.ctype, self.data[index], nulls, self.dictionary)

    def renamed(self, name: str) -> Column:
        return Column(name, self.ctype, self.data, self.nulls, self.dictionary)

    def decoded(self) -> np.ndarray:
        """Values as a numpy array of python-friendly scalars (nulls -> None)."""
        if self.ctype == ColumnType.CATEGORICAL:
            lookup = np.array(self.dictionary + ("",), dtype=object)
            out = lookup[self.data]
        else:
            out = self.data.astype(object)
        if self.nulls is not None:
            out = out.copy()
            out[self.nulls] = None
        return out

    def cell_text(self, i: int) -> str:
        """CSV text for one cell; the null sentinel is the empty string."""
        if self.nulls is not None and self.nulls[i]:
            return ""
        if self.ctype == ColumnType.CATEGORICAL:
            return self.dictionary[self.data[i]]
        if self.ctype == ColumnType.BOOLEAN:
            return "true" if self.data[i] else "false"
        if self.ctype == ColumnType.TIMESTAMP:
            return datetime.fromtimestamp(int(self.data[i]), tz=timezone.utc).isoformat()
        if self.ctype == ColumnType.FLOAT64:
            return repr(float(self.data[i]))
        return str(int(self.data[i]))


def _encode_categorical(name: str, cells: list[str | None]) -> Column:
    codes = np.empty(len(cells), dtype=np.int32)
    nulls = np.zeros(len(cells), dtype=bool)
    mapping: dict[str, int] = {}
    for i, cell in enumerate(cells):
        if cell is None:
            codes[i] = NULL_CODE
            nulls[i] = True
            continue
        code = mapping.get(cell)
        if code is None:
            code = len(mapping)
            mapping[cell] = code
        codes[i] = code
    return Column(name, ColumnType.CATEGORICAL, codes, nulls if nulls.any() else None,
                  tuple(mapping))


def _build_column(name: str, cells: list[str | None], ctype: ColumnType,
                  line_numbers: list[int] | None = None) -> Column:
    """Coerce raw text cells to a typed column, citing column and line on failure."""
    if ctype == ColumnType.CATEGORICAL:
        return _encode_categorical(name, cells)
    fast = _bulk_parse(cells, ctype)
    if fast is not None:
        return Column(name, ctype, fast)
    parser = _PARSERS[ctype]
    data = np.zeros(len(cells), dtype=_NUMPY_DTYPE[ctype])
    nulls = np.zeros(len(cells), dtype=bool)
    for i, cell in enumerate(cells):
        if cell is None:
            nulls[i] = True
            continue
        try:
            data[i] = parser(cell)
        except (ValueError, OverflowError):
            line = line_numbers[i] if line_numbers else i + 2
            raise ParseError(
                f"column {name!r}, line {line}: cannot parse {cell!r} as {ctype.value}",
                line=line, column=name) from None
    return Column(name, ctype, data, nulls if nulls.any() else None)


def _bulk_parse(cells: list[str | None], ctype: ColumnType) -> np.ndarray | None:
    """Vectorized conversion for null-free numeric columns; None means fall back."""
    if ctype not in (ColumnType.INT64, ColumnType.FLOAT64, ColumnType.TIMESTAMP):
        return None
    try:
        if ctype == ColumnType.FLOAT64:
            data = np.asarray(cells, dtype=np.float64)
            return data if np.isfinite(data).all() else None
        return np.asarray(cells, dtype=np.int64)
    except (ValueError, TypeError, OverflowError):
        return None  # nulls, ISO timestamps, or a bad cell: per-cell path decides


def _infer_type(cells: list[str | None]) -> ColumnType:
    non_null = [c for c in cells if c is not None]
    for ctype in _INFERENCE_ORDER:
        parser = _PARSERS[ctype]
        try:
            for cell in non_null:
                parser(cell)
        except (ValueError, OverflowError):
            continue
        return ctype
    return ColumnType.CATEGORICAL


class ColumnarTable:
    """Ordered collection of equal-length typed columns."""

    def __init__(self, name: str, columns: list[Column]):
        self.name = name
        seen = set()
        for col in columns:
            if col.name in seen:
                raise ValidationError(f"duplicate column name {col.name!r}")
            seen.add(col.name)
        self.columns = columns
        self.row_count = len(columns[0]) if columns else 0
        for col in columns:
            if len(col) != self.row_count:
                raise ValidationError(
                    f"column {col.name!r} has {len(col)} rows, expected {self.row_count}")
            col.validate()
        self._by_name = {c.name: c for c in columns}

    # -- access ----------------------------------------------------------

    def column(self, name: str) -> Column:
        col = self._by_name.get(name)
        if col is None:
            raise ValidationError(f"unknown column {name!r} in table {self.name!r}")
        return col

    def has_column(self, name: str) -> bool:
        return name in self._by_name

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def schema(self) -> dict[str, ColumnType]:
        return {c.name: c.ctype for c in self.columns}

    def nbytes(self) -> int:
        return sum(c.data.nbytes + (c.nulls.nbytes if c.nulls is not None else 0)
                   for c in self.columns)

    def __repr__(self):
        cols = ", ".join(f"{c.name}:{c.ctype.value}" for c in self.columns)
        return f"ColumnarTable({self.name!r}, {self.row_count} rows, [{cols}])"

    # -- construction ----------------------------------------------------

    @classmethod
    def from_arrays(cls, name: str, columns: list[Column]) -> ColumnarTable:
        return cls(name, columns)

    @classmethod
    def from_dict(cls, name: str, data: dict[str, list],
                  schema: dict[str, ColumnType] | None = None) -> ColumnarTable:
        """Build a table from python lists (used for fixtures and derived tables)."""
        columns = []
        for col_name, values in data.items():
            ctype = schema.get(col_name) if schema else None
            if ctype is None:
                ctype = _python_type(col_name, values)
            if ctype == ColumnType.CATEGORICAL:
                columns.append(_encode_categorical(col_name, values))
                continue
            data_arr = np.zeros(len(values), dtype=_NUMPY_DTYPE[ctype])
            nulls = np.zeros(len(values), dtype=bool)
            for i, v in enumerate(values):
                if v is None:
                    nulls[i] = True
                else:
                    data_arr[i] = v
            columns.append(Column(col_name, ctype, data_arr, nulls if nulls.any() else None))
        return cls(name, columns)

    def take(self, index: np.ndarray, name: str | None = None) -> ColumnarTable:
        return ColumnarTable(name or self.name, [c.take(index) for c in self.columns])

    def with_columns(self, extra: list[Column], name: str | None = None) -> ColumnarTable:
        return ColumnarTable(name or self.name, self.columns + extra)

    def select(self, names: list[str], name: str | None = None) -> ColumnarTable:
        return ColumnarTable(name or self.name, [self.column(n) for n in names])


def _python_type(name: str, values: list) -> ColumnType:
    for v in values:
        if v is None:
            continue
        if isinstance(v, (bool, np.bool_)):
            return ColumnType.BOOLEAN
        if isinstance(v, (int, np.integer)):
            return ColumnType.INT64
        if isinstance(v, (float, np.floating)):
            return ColumnType.FLOAT64
        if isinstance(v, str):
            return ColumnType.CATEGORICAL
        raise ValidationError(f"column {name!r}: unsupported value {v!r}")
    return ColumnType.FLOAT64  # all-null column


# -- CSV ingestion and persistence ----------------------------------------


def load_table(path: str | Path, schema: dict[str, ColumnType] | None = None,
               name: str | None = None, memory_cap: int = DEFAULT_MEMORY_CAP) -> ColumnarTable:
    """Load an RFC-4180 CSV with a header row.

    When ``schema`` is omitted a sidecar ``<path>.schema.json`` written by
    :func:`save_table` is used if present, otherwise types are inferred
    (boolean -> int64 -> float64 -> timestamp -> categorical). Empty cells
    are nulls.
    """
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    if path.stat().st_size > memory_cap:
        raise ValidationError(
            f"{path} is {path.stat().st_size} bytes, over the {memory_cap} byte cap")
    if schema is None:
        sidecar = _sidecar_path(path)
        if sidecar.exists():
            schema = read_schema(sidecar)

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, header row required") from None
        if len(set(header)) != len(header):
            raise ParseError(f"{path}: duplicate column names in header")
        cells: list[list[str | None]] = [[] for _ in header]
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(
                    f"{path}: line {line_no} has {len(row)} fields, expected {len(header)}",
                    line=line_no)
            for j, cell in enumerate(row):
                cells[j].append(cell if cell != "" else None)

    columns = []
    for j, col_name in enumerate(header):
        if schema is not None:
            if col_name not in schema:
                raise ValidationError(f"{path}: column {col_name!r} missing from schema")
            ctype = schema[col_name]
        else:
            ctype = _infer_type(cells[j])
        columns.append(_build_column(col_name, cells[j], ctype))
    return ColumnarTable(name or path.stem, columns)


def save_table(table: ColumnarTable, path: str | Path) -> Path:
    """Write CSV plus a sidecar schema file so reloads skip inference."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.column_names)
    texts = [[col.cell_text(i) for i in range(table.row_count)] for col in table.columns]
    for i in range(table.row_count):
        writer.writerow([texts[j][i] for j in range(len(table.columns))])
    path.write_text(buf.getvalue(), encoding="utf-8")
    write_schema(table.schema(), _sidecar_path(path))
    return path


def _sidecar_path(path: Path) -> Path:
    return path.with_name(path.name + ".schema.json")


def write_schema(schema: dict[str, ColumnType], path: Path):
    doc = {"columns": [{"name": n, "type": t.value} for n, t in schema.items()]}
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_schema(path: Path) -> dict[str, ColumnType]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return {c["name"]: ColumnType(c["type"]) for c in doc["columns"]}
