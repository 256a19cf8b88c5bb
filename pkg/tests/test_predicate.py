import json

import numpy as np
import pytest

from xp.errors import ValidationError
from xp.predicate import (TRUE, and_, clause, filter_table, or_, parse_predicate)
from xp.table import ColumnType, ColumnarTable


@pytest.fixture
def table():
    return ColumnarTable.from_dict("t", {
        "country": ["US", "US", "CA"],
        "device": ["ios", "android", "ios"],
        "hours": [1.0, 2.0, 3.0],
    })


def test_filter_eq(table):
    out = filter_table(table, clause("country", "eq", "US"))
    assert out.row_count == 2
    assert list(out.column("device").decoded()) == ["ios", "android"]


def test_tautological_disjunction(table):
    pred = or_(clause("country", "eq", "US"), clause("country", "eq", "CA"))
    out = filter_table(table, pred)
    assert out.row_count == table.row_count
    assert list(out.column("hours").data) == list(table.column("hours").data)


def test_unknown_column_rejected(table):
    with pytest.raises(ValidationError):
        filter_table(table, clause("nope", "eq", "US"))


def test_type_mismatch_rejected(table):
    with pytest.raises(ValidationError):
        filter_table(table, clause("country", "lt", "US"))
    with pytest.raises(ValidationError):
        filter_table(table, clause("hours", "eq", "US"))


def test_nulls_never_match():
    t = ColumnarTable.from_dict("t", {"x": [1.0, None, 3.0]})
    assert filter_table(t, clause("x", "ne", 1.0)).row_count == 1
    assert filter_table(t, clause("x", "lt", 100.0)).row_count == 2


def test_in_set(table):
    out = filter_table(table, clause("device", "in", ["ios", "web"]))
    assert out.row_count == 2


def test_large_filter_matches_row_scan_oracle(rng):
    n = 100_000
    countries = ["US", "CA", "DE", "JP", "BR"]
    values = [countries[i] for i in rng.integers(0, 5, n)]
    t = ColumnarTable.from_dict("big", {"country": values,
                                        "x": rng.normal(size=n).tolist()})
    pred = or_(clause("country", "eq", "DE"),
               and_(clause("country", "eq", "US"), clause("x", "gt", 0.5)))

    # oracle: naive per-row evaluation in python
    xs = t.column("x").data
    expected = [i for i in range(n)
                if values[i] == "DE" or (values[i] == "US" and xs[i] > 0.5)]

    out = filter_table(t, pred)
    got = np.flatnonzero(pred.evaluate(t))
    assert list(got) == expected
    assert out.row_count == len(expected)


def test_canonical_idempotent_and_order_invariant():
    a = and_(clause("device", "eq", "ios"), clause("country", "eq", "US"))
    b = and_(clause("country", "eq", "US"), clause("device", "eq", "ios"))
    assert a.canonical_string() == b.canonical_string()
    canon = a.canonical()
    assert canon.canonical_string() == canon.canonical().canonical_string()


def test_canonical_dedups_and_flattens():
    p = and_(clause("a", "eq", "x"),
             and_(clause("a", "eq", "x"), clause("b", "eq", "y")))
    c = p.canonical()
    assert len(c.children) == 2


def test_canonical_collapses_singletons_and_true():
    p = and_(TRUE, clause("a", "eq", "x"))
    assert p.canonical_string() == clause("a", "eq", "x").canonical_string()
    assert or_(TRUE, clause("a", "eq", "x")).canonical_string() == "true"
    assert TRUE.canonical_string() == "true"


def test_canonical_numbers_unify():
    assert clause("x", "eq", 1.0).canonical_string() == clause("x", "eq", 1).canonical_string()


def test_in_set_sorted_deduped():
    c = clause("c", "in", ["b", "a", "b"]).canonical()
    assert c.value == ("a", "b")


def test_randomized_canonicalization_invariance(rng):
    cols = ["c1", "c2", "c3"]
    for _ in range(50):
        leaves = [clause(cols[rng.integers(0, 3)], "eq", f"v{rng.integers(0, 3)}")
                  for _ in range(int(rng.integers(2, 6)))]
        p = and_(*leaves)
        shuffled = list(leaves)
        rng.shuffle(shuffled)
        q = and_(*shuffled)
        assert p.canonical_string() == q.canonical_string()
        assert p.canonical().canonical_string() == p.canonical_string()


def test_sequential_filters_equal_conjunction(rng):
    n = 5000
    t = ColumnarTable.from_dict("t", {
        "c": [["a", "b", "c"][i] for i in rng.integers(0, 3, n)],
        "x": rng.normal(size=n).tolist(),
        "k": rng.integers(0, 10, n).tolist(),
    })
    preds = [clause("c", "in", ["a", "b"]), clause("x", "le", 0.3),
             clause("k", "ne", 4), or_(clause("c", "eq", "a"), clause("k", "lt", 7))]
    for _ in range(25):
        take = rng.integers(0, 2, len(preds)).astype(bool)
        chosen = [p for p, keep in zip(preds, take) if keep] or [TRUE]
        sequential = t
        for p in chosen:
            sequential = filter_table(sequential, p)
        combined = filter_table(t, and_(*chosen))
        assert sequential.row_count == combined.row_count
        assert np.array_equal(sequential.column("x").data, combined.column("x").data)


def test_parse_roundtrip():
    doc = {"op": "or", "children": [
        {"col": "country", "cmp": "eq", "value": "US"},
        {"op": "and", "children": [
            {"col": "device", "cmp": "in", "value": ["ios", "web"]},
            {"col": "hours", "cmp": "ge", "value": 2},
        ]},
    ]}
    p = parse_predicate(doc)
    again = parse_predicate(json.loads(json.dumps(p.to_doc())))
    assert p.canonical_string() == again.canonical_string()


def test_parse_rejects_malformed():
    for doc in [{"op": "and", "children": []}, {"col": "x"}, 42, "x", {"nope": 1}]:
        with pytest.raises(ValidationError):
            parse_predicate(doc)
