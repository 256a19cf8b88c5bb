"""Joins and grouped aggregation over columnar tables."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .table import Column, ColumnType, ColumnarTable

AGGREGATES = ("count", "sum", "mean", "min", "max", "count-distinct")


def _factorize(col: Column) -> tuple[np.ndarray, int, np.ndarray, np.ndarray]:
    """Map a column to dense int codes.

    Returns (codes, level_count, level_values, level_is_null); nulls get a
    dedicated trailing level so they group together.
    """
    nulls = col.null_mask
    if col.ctype == ColumnType.CATEGORICAL:
        n = len(col.dictionary)
        codes = col.data.astype(np.int64)
        codes[nulls] = n
        levels = np.array(col.dictionary + ("",), dtype=object)
        level_nulls = np.zeros(n + 1, dtype=bool)
        level_nulls[n] = True
        has_null = bool(nulls.any())
        return codes, n + (1 if has_null else 0) or 1, levels, level_nulls
    valid = col.data[~nulls]
    uniq, inv = np.unique(valid, return_inverse=True)
    codes = np.empty(len(col.data), dtype=np.int64)
    codes[~nulls] = inv
    codes[nulls] = len(uniq)
    has_null = bool(nulls.any())
    levels = np.concatenate([uniq, np.zeros(1, dtype=uniq.dtype)])
    level_nulls = np.zeros(len(uniq) + 1, dtype=bool)
    level_nulls[len(uniq)] = True
    return codes, max(len(uniq) + (1 if has_null else 0), 1), levels, level_nulls


def combine_codes(code_arrays: list[np.ndarray], sizes: list[int]) -> np.ndarray:
    """Mixed-radix combination of per-column codes into one int64 key."""
    if not code_arrays:
        raise ValueError("need at least one code array")
    combined = code_arrays[0].astype(np.int64)
    total = sizes[0]
    for codes, size in zip(code_arrays[1:], sizes[1:]):
        total *= max(size, 1)
        if total >= 2**62:
            raise ValidationError("group key space too large to combine")
        combined = combined * size + codes
    return combined


def inner_join(left: ColumnarTable, right: ColumnarTable, key: str,
               name: str | None = None) -> ColumnarTable:
    """Inner join on one key column; right columns appended.

    Output rows are ordered by left row then right row. Null keys never
    match. Duplicate non-key column names from the right table get a
    ``_right`` suffix.
    """
    for tbl in (left, right):
        if not tbl.has_column(key):
            raise ValidationError(f"join key {key!r} missing from table {tbl.name!r}")
    lcol, rcol = left.column(key), right.column(key)
    if lcol.ctype != rcol.ctype:
        raise ValidationError(
            f"join key {key!r} has type {lcol.ctype.value} on the left "
            f"but {rcol.ctype.value} on the right")

    lvals, rvals = _aligned_key_values(lcol, rcol)
    lvalid = np.flatnonzero(~lcol.null_mask)
    rvalid = np.flatnonzero(~rcol.null_mask)
    rorder = rvalid[np.argsort(rvals[rvalid], kind="stable")]
    rsorted = rvals[rorder]
    lo = np.searchsorted(rsorted, lvals[lvalid], side="left")
    hi = np.searchsorted(rsorted, lvals[lvalid], side="right")
    counts = hi - lo
    left_idx = np.repeat(lvalid, counts)
    total = int(counts.sum())
    base = np.repeat(np.cumsum(counts) - counts, counts)
    pos = np.arange(total) - base + np.repeat(lo, counts)
    right_idx = rorder[pos]

    columns = [c.take(left_idx) for c in left.columns]
    taken_names = set(left.column_names)
    for col in right.columns:
        if col.name == key:
            continue
        out_name = col.name
        while out_name in taken_names:
            out_name += "_right"
        taken_names.add(out_name)
        columns.append(col.take(right_idx).renamed(out_name))
    return ColumnarTable(name or left.name, columns)


def _aligned_key_values(lcol: Column, rcol: Column) -> tuple[np.ndarray, np.ndarray]:
    if lcol.ctype != ColumnType.CATEGORICAL:
        return lcol.data, rcol.data
    # Remap right codes into the left dictionary's code space; right-only
    # values get fresh codes so they simply never match.
    mapping = {v: i for i, v in enumerate(lcol.dictionary)}
    remap = np.empty(len(rcol.dictionary) + 1, dtype=np.int64)
    next_code = len(lcol.dictionary)
    for i, v in enumerate(rcol.dictionary):
        code = mapping.get(v)
        if code is None:
            code = next_code
            next_code += 1
        remap[i] = code
    remap[-1] = -1  # null slot
    return lcol.data.astype(np.int64), remap[rcol.data]


def group_aggregate(table: ColumnarTable, keys: list[str],
                    aggs: list[tuple[str, str]],
                    name: str | None = None) -> ColumnarTable:
    """One output row per distinct key combination, sorted by key tuple.

    ``aggs`` entries are ``(column, agg)`` with agg in {count, sum, mean,
    min, max, count-distinct}. Nulls are excluded from every aggregate;
    a group whose values are all null gets a null mean/min/max. With no
    keys the whole table forms a single group.
    """
    for col_name, agg in aggs:
        if agg not in AGGREGATES:
            raise ValidationError(f"unknown aggregate {agg!r}")
        col = table.column(col_name)
        if agg in ("sum", "mean") and not col.ctype.is_numeric:
            raise ValidationError(
                f"aggregate {agg!r} requires a numeric column, "
                f"{col_name!r} is {col.ctype.value}")
        if agg in ("min", "max") and col.ctype == ColumnType.CATEGORICAL:
            raise ValidationError(f"aggregate {agg!r} not supported for categorical columns")

    n = table.row_count
    if keys:
        factored = [_factorize(table.column(k)) for k in keys]
        combined = combine_codes([f[0] for f in factored], [f[1] for f in factored])
        uniq, first_pos, inverse = np.unique(combined, return_index=True, return_inverse=True)
        n_groups = len(uniq)
        # Order groups by key values, nulls after values within each column.
        sort_keys = []
        for k, (codes, _, levels, level_nulls) in zip(keys, factored):
            group_codes = codes[first_pos]
            sort_keys.append(level_nulls[group_codes])  # nulls sort after values
            sort_keys.append(levels[group_codes])
        order = np.lexsort(tuple(reversed(sort_keys))) if n_groups else np.arange(0)
        rank = np.empty(n_groups, dtype=np.int64)
        rank[order] = np.arange(n_groups)
        inverse = rank[inverse]
        first_pos = first_pos[order]
    else:
        n_groups = 1 if n else 0
        inverse = np.zeros(n, dtype=np.int64)
        first_pos = np.zeros(min(n, 1), dtype=np.int64)

    columns = [table.column(k).take(first_pos) for k in keys]
    used = {c.name for c in columns}
    for col_name, agg in aggs:
        out_name = f"{col_name}_{agg.replace('-', '_')}"
        while out_name in used:
            out_name += "_"
        used.add(out_name)
        columns.append(_aggregate_column(table.column(col_name), inverse, n_groups, agg,
                                         out_name))
    return ColumnarTable(name or table.name, columns)


def _aggregate_column(col: Column, inverse: np.ndarray, n_groups: int, agg: str,
                      out_name: str) -> Column:
    valid = ~col.null_mask
    g = inverse[valid]
    counts = np.bincount(g, minlength=n_groups).astype(np.int64)

    if agg == "count":
        return Column(out_name, ColumnType.INT64, counts)

    if agg == "count-distinct":
        if col.ctype == ColumnType.CATEGORICAL:
            vcodes = col.data[valid].astype(np.int64)
            n_levels = max(len(col.dictionary), 1)
        else:
            _, vcodes = np.unique(col.data[valid], return_inverse=True)
            n_levels = max(int(vcodes.max()) + 1 if len(vcodes) else 1, 1)
        pairs = np.unique(combine_codes([g, vcodes], [n_groups, n_levels]))
        distinct = np.bincount(pairs // n_levels, minlength=n_groups).astype(np.int64)
        return Column(out_name, ColumnType.INT64, distinct)

    values = col.data[valid]
    if agg in ("sum", "mean"):
        if col.ctype == ColumnType.FLOAT64 or agg == "mean":
            sums = np.bincount(g, weights=values.astype(np.float64), minlength=n_groups)
        else:
            sums = np.zeros(n_groups, dtype=np.int64)
            np.add.at(sums, g, values.astype(np.int64))
        if agg == "sum":
            ctype = ColumnType.FLOAT64 if col.ctype == ColumnType.FLOAT64 else ColumnType.INT64
            return Column(out_name, ctype, sums)
        with np.errstate(invalid="ignore"):
            means = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
        return Column(out_name, ColumnType.FLOAT64, means, counts == 0)

    # min / max via a group-sorted reduceat
    order = np.argsort(g, kind="stable")
    g_sorted = g[order]
    v_sorted = values[order]
    present, starts = np.unique(g_sorted, return_index=True)
    out = np.zeros(n_groups, dtype=col.data.dtype)
    if len(v_sorted):
        reducer = np.minimum if agg == "min" else np.maximum
        out[present] = reducer.reduceat(v_sorted, starts)
    return Column(out_name, col.ctype, out, counts == 0)
