"""Synthetic streaming-experiment datasets shared across service-level tests."""

import json
from pathlib import Path

import numpy as np

from xp.metrics import MetricDefinition, MetricRegistry
from xp.service.app import load_registry
from xp.table import ColumnType, ColumnarTable, save_table

COUNTRIES = ("US", "CA", "DE")
DEVICES = ("ios", "android")
DAY = 86400


def metric_docs():
    return [
        {
            "name": "num_streamers",
            "source": "events.csv",
            "unit": "user_id",
            "where": {"col": "duration_seconds", "cmp": "gt", "value": 3600},
            "aggregation": {"agg": "count"},
            "statistics": ["descriptive", "t-test", "ols"],
            "display": {"label": "Sessions over one hour", "plot": "ci-interval",
                        "precision": 3},
        },
        {
            "name": "hours_streamed",
            "source": "events.csv",
            "unit": "user_id",
            "aggregation": {"agg": "sum", "column": "duration_seconds"},
            "statistics": ["descriptive", "t-test", "ols", "mann-whitney", "quantile"],
            "display": {"label": "Seconds streamed", "precision": 1},
        },
        {
            "name": "is_streamer",
            "source": "events.csv",
            "unit": "user_id",
            "where": {"col": "duration_seconds", "cmp": "gt", "value": 3600},
            "aggregation": {"agg": "count"},
            "threshold": {"cmp": "gt", "value": 0},
            "statistics": ["descriptive", "proportion-test"],
            "display": {"label": "Streamer rate", "precision": 4},
        },
    ]


def write_dataset(data_dir: Path, rng, n_users=400, mean_sessions=3.0,
                  treatment_lift=0.35, n_days=3):
    """Events + allocations + member enrichment, with a known treatment lift."""
    data_dir.mkdir(parents=True, exist_ok=True)
    users = [f"u{i:05d}" for i in range(n_users)]
    country = rng.integers(0, len(COUNTRIES), n_users)
    device = rng.integers(0, len(DEVICES), n_users)
    cell = rng.integers(0, 2, n_users)  # 0 control, 1 treatment

    ev_users, ev_ts, ev_duration = [], [], []
    for i in range(n_users):
        rate = mean_sessions * (1.0 + treatment_lift * cell[i]) * \
            (1.0 + 0.2 * country[i])
        for _ in range(rng.poisson(rate)):
            ev_users.append(users[i])
            ev_ts.append(int(rng.integers(0, n_days) * DAY + rng.integers(0, DAY)))
            ev_duration.append(float(rng.exponential(3000.0) + 200.0))

    events = ColumnarTable.from_dict("events", {
        "user_id": ev_users,
        "ts": ev_ts,
        "duration_seconds": ev_duration,
    }, schema={"user_id": ColumnType.CATEGORICAL, "ts": ColumnType.TIMESTAMP,
               "duration_seconds": ColumnType.FLOAT64})
    save_table(events, data_dir / "events.csv")

    allocations = ColumnarTable.from_dict("allocations", {
        "user_id": users,
        "cell": ["treatment" if c else "control" for c in cell],
    })
    save_table(allocations, data_dir / "allocations.csv")

    members = ColumnarTable.from_dict("members", {
        "user_id": users,
        "country": [COUNTRIES[i] for i in country],
        "device": [DEVICES[i] for i in device],
    })
    save_table(members, data_dir / "members.csv")
    return data_dir


def write_registry(registry_dir: Path, data_dir: Path) -> MetricRegistry:
    registry_dir.mkdir(parents=True, exist_ok=True)
    registry = load_registry(registry_dir, data_dir)
    for doc in metric_docs():
        registry.register(MetricDefinition.from_doc(doc))
    registry.save(registry_dir / "registry.json")
    return registry


def analysis_doc(metrics=("num_streamers", "hours_streamed", "is_streamer"),
                 with_time=False, seed=777, precompute=("country",)):
    doc = {
        "name": "streaming-experiment",
        "data": {
            "events": "events.csv",
            "allocations": "allocations.csv",
            "enrichments": [{"table": "members.csv", "key": "user_id"}],
        },
        "unit": "user_id",
        "cell_column": "cell",
        "control": "control",
        "treatment": "treatment",
        "metrics": list(metrics),
        "dimensions": ["country", "device"],
        "precompute": list(precompute),
        "covariates": ["country"],
        "cate_dimensions": ["country"],
        "seed": seed,
    }
    if with_time:
        doc["time"] = {"column": "ts", "granularity": "day"}
    return doc


def write_spec(path: Path, doc: dict) -> Path:
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return path


def standard_setup(tmp_path: Path, rng, **dataset_kw):
    """data dir + registry + spec file; the common test scaffold."""
    data_dir = write_dataset(tmp_path / "data", rng, **dataset_kw)
    registry = write_registry(tmp_path / "registry", data_dir)
    return data_dir, tmp_path / "registry", registry
