"""Slice predicates: boolean clause trees over table columns.

A predicate document is JSON: the literal ``true`` (match everything), a
clause ``{"col": ..., "cmp": ..., "value": ...}``, or a node
``{"op": "and"|"or", "children": [...]}``. The canonical form - children
flattened, deduplicated, and sorted - is the engine-wide cache key for a
slice, so two spellings of the same predicate resolve to one scorecard.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .table import ColumnarTable, ColumnType, _parse_timestamp

COMPARATORS = ("eq", "ne", "lt", "le", "gt", "ge", "in")
_ORDERED = ("lt", "le", "gt", "ge")


class Predicate:
    def to_doc(self):
        raise NotImplementedError

    def canonical(self) -> Predicate:
        raise NotImplementedError

    def canonical_string(self) -> str:
        return json.dumps(self.canonical().to_doc(), sort_keys=True, separators=(",", ":"))

    def validate(self, schema: dict[str, ColumnType]):
        raise NotImplementedError

    def evaluate(self, table: ColumnarTable) -> np.ndarray:
        raise NotImplementedError

    def columns(self) -> set[str]:
        raise NotImplementedError

    def __eq__(self, other):
        return isinstance(other, Predicate) and self.canonical_string() == other.canonical_string()

    def __hash__(self):
        return hash(self.canonical_string())


class MatchAll(Predicate):
    def to_doc(self):
        return True

    def canonical(self):
        return self

    def validate(self, schema):
        pass

    def evaluate(self, table):
        return np.ones(table.row_count, dtype=bool)

    def columns(self):
        return set()

    def __repr__(self):
        return "MatchAll()"


TRUE = MatchAll()


def _canonical_value(value):
    # 1.0 and 1 must canonicalize identically; bool is checked first since
    # python bools are ints.
    if isinstance(value, bool):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    return value


@dataclass(frozen=True)
class Clause(Predicate):
    col: str
    cmp: str
    value: object

    def __post_init__(self):
        if self.cmp not in COMPARATORS:
            raise ValidationError(f"unknown comparator {self.cmp!r}")
        if self.cmp == "in" and not isinstance(self.value, (list, tuple)):
            raise ValidationError("'in' comparator requires a list literal")

    def to_doc(self):
        return {"col": self.col, "cmp": self.cmp, "value": self.value}

    def canonical(self):
        if self.cmp == "in":
            vals = sorted({_canonical_value(v) for v in self.value}, key=_sort_token)
            return Clause(self.col, "in", tuple(vals))
        return Clause(self.col, self.cmp, _canonical_value(self.value))

    def columns(self):
        return {self.col}

    def validate(self, schema):
        if self.col not in schema:
            raise ValidationError(f"predicate references unknown column {self.col!r}")
        ctype = schema[self.col]
        if self.cmp in _ORDERED and ctype in (ColumnType.CATEGORICAL, ColumnType.BOOLEAN):
            raise ValidationError(
                f"comparator {self.cmp!r} not valid for {ctype.value} column {self.col!r}")
        values = self.value if self.cmp == "in" else (self.value,)
        for v in values:
            _check_literal(self.col, ctype, v)

    def evaluate(self, table):
        col = table.column(self.col)
        not_null = ~col.null_mask
        if col.ctype == ColumnType.CATEGORICAL:
            mapping = {v: i for i, v in enumerate(col.dictionary)}
            if self.cmp == "in":
                codes = [mapping[v] for v in self.value if v in mapping]
                return np.isin(col.data, codes) & not_null
            code = mapping.get(self.value, -2)  # -2 matches nothing, including nulls
            if self.cmp == "eq":
                return (col.data == code) & not_null
            if self.cmp == "ne":
                return (col.data != code) & not_null
            raise ValidationError(f"comparator {self.cmp!r} not valid for categorical column")
        literal = _coerce_literal(col.ctype, self.value) if self.cmp != "in" else None
        if self.cmp == "in":
            values = [_coerce_literal(col.ctype, v) for v in self.value]
            return np.isin(col.data, values) & not_null
        ops = {"eq": np.equal, "ne": np.not_equal, "lt": np.less,
               "le": np.less_equal, "gt": np.greater, "ge": np.greater_equal}
        return ops[self.cmp](col.data, literal) & not_null

    def __repr__(self):
        return f"Clause({self.col} {self.cmp} {self.value!r})"


@dataclass(frozen=True)
class BoolOp(Predicate):
    op: str  # "and" | "or"
    children: tuple[Predicate, ...]

    def __post_init__(self):
        if self.op not in ("and", "or"):
            raise ValidationError(f"unknown boolean op {self.op!r}")

    def to_doc(self):
        return {"op": self.op, "children": [c.to_doc() for c in self.children]}

    def canonical(self):
        flat: list[Predicate] = []
        for child in self.children:
            c = child.canonical()
            if isinstance(c, MatchAll):
                if self.op == "or":
                    return TRUE
                continue  # AND with true is a no-op
            if isinstance(c, BoolOp) and c.op == self.op:
                flat.extend(c.children)
            else:
                flat.append(c)
        unique = {c.canonical_string(): c for c in flat}
        ordered = [unique[k] for k in sorted(unique, key=_clause_order(unique))]
        if not ordered:
            return TRUE
        if len(ordered) == 1:
            return ordered[0]
        return BoolOp(self.op, tuple(ordered))

    def columns(self):
        out: set[str] = set()
        for c in self.children:
            out |= c.columns()
        return out

    def validate(self, schema):
        if not self.children:
            raise ValidationError(f"empty {self.op!r} node")
        for c in self.children:
            c.validate(schema)

    def evaluate(self, table):
        masks = [c.evaluate(table) for c in self.children]
        combine = np.logical_and if self.op == "and" else np.logical_or
        out = masks[0]
        for m in masks[1:]:
            out = combine(out, m)
        return out

    def __repr__(self):
        return f"BoolOp({self.op}, {list(self.children)})"


def _sort_token(value):
    # total order across mixed literal types for deterministic canonical form
    if isinstance(value, bool):
        return (0, str(value))
    if isinstance(value, (int, float)):
        return (1, "", float(value))
    return (2, str(value))


def _clause_order(by_key: dict[str, Predicate]):
    def key(canonical_str: str):
        node = by_key[canonical_str]
        if isinstance(node, Clause):
            return (0, node.col, node.cmp, canonical_str)
        return (1, "", "", canonical_str)

    return key


def _check_literal(col: str, ctype: ColumnType, value):
    ok = False
    if ctype == ColumnType.CATEGORICAL:
        ok = isinstance(value, str)
    elif ctype == ColumnType.BOOLEAN:
        ok = isinstance(value, bool)
    elif ctype in (ColumnType.INT64, ColumnType.FLOAT64):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif ctype == ColumnType.TIMESTAMP:
        if isinstance(value, str):
            try:
                _parse_timestamp(value)
                ok = True
            except ValueError:
                ok = False
        else:
            ok = isinstance(value, int) and not isinstance(value, bool)
    if not ok:
        raise ValidationError(
            f"literal {value!r} not compatible with {ctype.value} column {col!r}")


def _coerce_literal(ctype: ColumnType, value):
    if ctype == ColumnType.TIMESTAMP and isinstance(value, str):
        return _parse_timestamp(value)
    return value


def parse_predicate(doc) -> Predicate:
    """Parse a JSON predicate document into a tree; raises on malformed docs."""
    if doc is True or doc is None:
        return TRUE
    if not isinstance(doc, dict):
        raise ValidationError(f"malformed predicate: {doc!r}")
    if "op" in doc:
        children = doc.get("children")
        if not isinstance(children, list) or not children:
            raise ValidationError("boolean node requires a non-empty children list")
        return BoolOp(doc["op"], tuple(parse_predicate(c) for c in children))
    if "col" in doc:
        if "cmp" not in doc or "value" not in doc:
            raise ValidationError("clause requires col, cmp, and value")
        value = doc["value"]
        if isinstance(value, list):
            value = tuple(value)
        return Clause(doc["col"], doc["cmp"], value)
    raise ValidationError(f"malformed predicate: {doc!r}")


def clause(col: str, cmp: str, value) -> Clause:
    if isinstance(value, list):
        value = tuple(value)
    return Clause(col, cmp, value)


def and_(*children: Predicate) -> Predicate:
    return BoolOp("and", tuple(children))


def or_(*children: Predicate) -> Predicate:
    return BoolOp("or", tuple(children))


def filter_table(table: ColumnarTable, pred: Predicate) -> ColumnarTable:
    """Rows satisfying the predicate, original order preserved."""
    pred.validate(table.schema())
    mask = pred.evaluate(table)
    return table.take(np.flatnonzero(mask))
