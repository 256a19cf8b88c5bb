import numpy as np
import pytest

from xp.errors import ConflictError, ValidationError
from xp.metrics import (FilterStep, JoinStep, MetricDefinition, MetricRegistry,
                        compile_metric, evaluate_metric, execute_plan, run_phase1,
                        run_phase2, validate_metric)
from xp.predicate import TRUE, and_, clause
from xp.table import ColumnType, ColumnarTable

# Streaming-session fixture: for each user, count sessions over one hour.
NUM_STREAMERS = MetricDefinition(
    name="num_streamers", source="events", unit_column="user_id",
    aggregation="count",
    event_filter=clause("duration_seconds", "gt", 3600),
    statistics=("descriptive", "t-test"),
    display={"label": "Sessions over one hour", "plot": "ci-interval"})

EVENTS_SCHEMA = {
    "user_id": ColumnType.CATEGORICAL,
    "duration_seconds": ColumnType.FLOAT64,
    "country": ColumnType.CATEGORICAL,
}


def events_table():
    # user a: 0.5h, 2h, 3h sessions; user b: 0.4h
    return ColumnarTable.from_dict("events", {
        "user_id": ["a", "a", "a", "b"],
        "duration_seconds": [1800.0, 7200.0, 10800.0, 1440.0],
        "country": ["US", "US", "US", "CA"],
    })


def allocations_table(users=("a", "b"), cells=("control", "treatment")):
    return ColumnarTable.from_dict("allocations", {
        "user_id": list(users),
        "cell": [cells[i % len(cells)] for i in range(len(users))],
    })


def test_validate_ok():
    assert validate_metric(NUM_STREAMERS, EVENTS_SCHEMA) == []


def test_validate_unknown_statistic():
    bad = MetricDefinition(name="m", source="events", unit_column="user_id",
                           aggregation="count", statistics=("magic",))
    diags = validate_metric(bad, EVENTS_SCHEMA)
    assert len(diags) == 1 and "magic" in diags[0]


def test_validate_mean_over_categorical():
    bad = MetricDefinition(name="m", source="events", unit_column="user_id",
                           aggregation="mean", value_column="country",
                           statistics=("t-test",))
    diags = validate_metric(bad, EVENTS_SCHEMA)
    assert len(diags) == 1 and "country" in diags[0]


def test_validate_missing_column():
    bad = MetricDefinition(name="m", source="events", unit_column="user_id",
                           aggregation="sum", value_column="durr",
                           statistics=("t-test",))
    diags = validate_metric(bad, EVENTS_SCHEMA)
    assert any("durr" in d for d in diags)


def test_registry_versions():
    reg = MetricRegistry({"events": EVENTS_SCHEMA})
    assert reg.register(NUM_STREAMERS) == 1
    changed = MetricDefinition(
        name="num_streamers", source="events", unit_column="user_id",
        aggregation="count", event_filter=clause("duration_seconds", "gt", 7200),
        statistics=("descriptive", "t-test"))
    assert reg.register(changed) == 2
    assert reg.resolve("num_streamers", 1).event_filter == \
        clause("duration_seconds", "gt", 3600)
    assert reg.resolve("num_streamers").event_filter == \
        clause("duration_seconds", "gt", 7200)


def test_registry_history_stable_across_later_registrations():
    reg = MetricRegistry({"events": EVENTS_SCHEMA})
    reg.register(NUM_STREAMERS)
    original = reg.resolve("num_streamers", 1).to_doc()
    for threshold in (7200, 1800, 900):
        reg.register(MetricDefinition(
            name="num_streamers", source="events", unit_column="user_id",
            aggregation="count",
            event_filter=clause("duration_seconds", "gt", threshold),
            statistics=("descriptive", "t-test")))
    assert reg.resolve("num_streamers", 1).to_doc() == original
    assert reg.version == 4


def test_registry_duplicate_conflict():
    reg = MetricRegistry({"events": EVENTS_SCHEMA})
    reg.register(NUM_STREAMERS)
    with pytest.raises(ConflictError):
        reg.register(NUM_STREAMERS)


def test_registry_rejects_invalid():
    reg = MetricRegistry({"events": EVENTS_SCHEMA})
    bad = MetricDefinition(name="m", source="events", unit_column="user_id",
                           aggregation="sum", value_column="durr",
                           statistics=("t-test",))
    with pytest.raises(ValidationError) as err:
        reg.register(bad)
    assert "durr" in str(err.value)


def test_registry_save_load_roundtrip(tmp_path):
    reg = MetricRegistry({"events": EVENTS_SCHEMA})
    reg.register(NUM_STREAMERS)
    reg.save(tmp_path / "registry.json")
    again = MetricRegistry.load(tmp_path / "registry.json", {"events": EVENTS_SCHEMA})
    assert again.version == 1
    assert again.resolve("num_streamers").to_doc() == NUM_STREAMERS.to_doc()


def test_compile_plan_shape():
    plan = compile_metric(NUM_STREAMERS)
    assert len(plan.phase1) == 1
    assert isinstance(plan.phase1[0], FilterStep)
    assert plan.phase1[0].predicate == clause("duration_seconds", "gt", 3600)
    doc = plan.describe()
    assert doc["phase2"][0] == {"filter": "<slice>"}
    assert doc["phase2"][1]["group_by"] == "user_id"
    assert doc["phase2"][1]["agg"] == "count"


def test_compile_no_filter_metric():
    plain = MetricDefinition(name="m", source="events", unit_column="user_id",
                             aggregation="count", statistics=("t-test",))
    plan = compile_metric(plain)
    assert plan.phase1 == ()


def test_compile_with_enrichment_deterministic():
    plan1 = compile_metric(NUM_STREAMERS, [("members", "user_id")])
    plan2 = compile_metric(NUM_STREAMERS, [("members", "user_id")])
    assert plan1 == plan2
    assert isinstance(plan1.phase1[0], JoinStep)


def test_evaluate_num_streamers():
    out = evaluate_metric(NUM_STREAMERS, events_table(), allocations_table())
    assert list(out.column("user_id").decoded()) == ["a", "b"]
    assert list(out.column("value").data) == [2.0, 0.0]


def test_evaluate_slice_excluding_everything_zero_fills():
    out = evaluate_metric(NUM_STREAMERS, events_table(), allocations_table(),
                          slice_pred=clause("country", "eq", "XX"))
    assert list(out.column("value").data) == [0.0, 0.0]


def test_evaluate_mean_metric_null_for_missing_units():
    mean_def = MetricDefinition(
        name="mean_duration", source="events", unit_column="user_id",
        aggregation="mean", value_column="duration_seconds",
        event_filter=clause("duration_seconds", "gt", 3600),
        statistics=("t-test",))
    out = evaluate_metric(mean_def, events_table(), allocations_table())
    assert out.column("value").data[0] == pytest.approx(9000.0)
    assert out.column("value").null_mask.tolist() == [False, True]


def test_evaluate_threshold_makes_boolean():
    streamer = MetricDefinition(
        name="is_streamer", source="events", unit_column="user_id",
        aggregation="count", event_filter=clause("duration_seconds", "gt", 3600),
        post_transform=("gt", 0), statistics=("proportion-test",))
    out = evaluate_metric(streamer, events_table(), allocations_table())
    assert out.column("value").ctype == ColumnType.BOOLEAN
    assert list(out.column("value").data) == [True, False]


def test_evaluate_duplicate_allocation_rejected():
    with pytest.raises(ValidationError):
        evaluate_metric(NUM_STREAMERS, events_table(),
                        allocations_table(users=("a", "a")))


def brute_force_units(definition, events, allocations, slice_doc=None):
    """Oracle: per-unit nested loops over decoded rows."""
    units = list(allocations.column(definition.unit_column).decoded())
    cells = list(allocations.column("cell").decoded())
    ev_units = list(events.column(definition.unit_column).decoded())
    out = {}
    for unit, cell in zip(units, cells):
        values = []
        for i in range(events.row_count):
            if ev_units[i] != unit:
                continue
            row = {name: events.column(name).decoded()[i]
                   for name in events.column_names}
            dur = row.get("duration_seconds")
            if definition.event_filter is not TRUE:
                if dur is None or not dur > 3600:
                    continue
            if slice_doc is not None and row.get("country") != slice_doc:
                continue
            values.append(row.get(definition.value_column) if definition.value_column
                          else 1.0)
        if definition.aggregation == "count":
            out[unit] = float(len(values))
        elif definition.aggregation == "sum":
            out[unit] = float(sum(v for v in values if v is not None))
        elif definition.aggregation == "mean":
            vals = [v for v in values if v is not None]
            out[unit] = float(np.mean(vals)) if vals else None
        else:
            raise AssertionError("oracle only covers count/sum/mean")
    return out


def random_fixture(rng, n_events=10_000, n_units=800):
    unit_ids = [f"u{i}" for i in range(n_units)]
    events = ColumnarTable.from_dict("events", {
        "user_id": [unit_ids[i] for i in rng.integers(0, n_units, n_events)],
        "duration_seconds": (rng.exponential(3000, n_events)).tolist(),
        "country": [["US", "CA", "DE"][i] for i in rng.integers(0, 3, n_events)],
    })
    allocated = [u for u in unit_ids if rng.random() < 0.9]
    allocations = ColumnarTable.from_dict("allocations", {
        "user_id": allocated,
        "cell": ["treatment" if rng.random() < 0.5 else "control" for _ in allocated],
    })
    return events, allocations


def test_evaluate_matches_brute_force_oracle(rng):
    events, allocations = random_fixture(rng)
    out = evaluate_metric(NUM_STREAMERS, events, allocations)
    oracle = brute_force_units(NUM_STREAMERS, events, allocations)
    got_units = list(out.column("user_id").decoded())
    got_values = out.column("value").data
    assert got_units == list(allocations.column("user_id").decoded())
    for unit, value in zip(got_units, got_values):
        assert value == oracle[unit]


def test_two_phase_equivalence(rng):
    events, allocations = random_fixture(rng, n_events=5000, n_units=300)
    plan = compile_metric(NUM_STREAMERS)
    slices = [TRUE, clause("country", "eq", "US"),
              and_(clause("country", "in", ["US", "CA"]),
                   clause("duration_seconds", "lt", 5000.0))]
    phase1_table = run_phase1(plan, NUM_STREAMERS, events, allocations)
    for s in slices:
        via_plan = run_phase2(plan, NUM_STREAMERS, phase1_table, allocations, s)
        monolithic = evaluate_metric(NUM_STREAMERS, events, allocations, s)
        assert list(via_plan.column("value").data) == \
            list(monolithic.column("value").data)
        assert np.array_equal(via_plan.column("value").null_mask,
                              monolithic.column("value").null_mask)


def test_execute_plan_equals_evaluate(rng):
    events, allocations = random_fixture(rng, n_events=3000, n_units=200)
    plan = compile_metric(NUM_STREAMERS)
    a = execute_plan(plan, NUM_STREAMERS, events, allocations,
                     clause("country", "eq", "CA"))
    b = evaluate_metric(NUM_STREAMERS, events, allocations,
                        clause("country", "eq", "CA"))
    assert list(a.column("value").data) == list(b.column("value").data)


def test_enrichment_join_in_plan(rng):
    events, allocations = random_fixture(rng, n_events=2000, n_units=150)
    members = ColumnarTable.from_dict("members", {
        "user_id": [f"u{i}" for i in range(150)],
        "plan_tier": [["basic", "premium"][i % 2] for i in range(150)],
    })
    definition = MetricDefinition(
        name="premium_sessions", source="events", unit_column="user_id",
        aggregation="count",
        event_filter=and_(clause("duration_seconds", "gt", 1000),
                          clause("plan_tier", "eq", "premium")),
        statistics=("t-test",))
    out = evaluate_metric(definition, events, allocations,
                          enrichments={"members": members},
                          enrichment_keys=[("members", "user_id")])
    assert out.row_count == allocations.row_count
    # basic-tier users can have no qualifying events
    tiers = {u: t for u, t in zip(members.column("user_id").decoded(),
                                  members.column("plan_tier").decoded())}
    for unit, value in zip(out.column("user_id").decoded(), out.column("value").data):
        if tiers[unit] == "basic":
            assert value == 0.0
