import json
import time

import pytest
from fastapi.testclient import TestClient

from fixtures import analysis_doc, metric_docs, standard_setup
from xp.predicate import TRUE, clause, parse_predicate
from xp.scorecard import parse_scorecard
from xp.service.app import AnalysisService, create_app, load_registry


@pytest.fixture
def harness(tmp_path, rng):
    data_dir, registry_dir, registry = standard_setup(tmp_path, rng)
    service = AnalysisService(tmp_path / "store", registry, data_dir, workers=2)
    client = TestClient(create_app(service))
    yield tmp_path, data_dir, registry_dir, service, client
    service.shutdown()


def wait_ready(client, analysis_id, timeout=30.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        record = client.get(f"/analyses/{analysis_id}").json()
        if record["state"] in ("ready", "failed"):
            return record
        time.sleep(0.05)
    raise AssertionError("analysis did not reach a terminal state")


def wait_job(client, job_id, timeout=30.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        job = client.get(f"/jobs/{job_id}").json()
        if job["state"] in ("done", "failed"):
            return job
        time.sleep(0.05)
    raise AssertionError("job did not finish")


def wait_slice(client, analysis_id, canonical, timeout=30.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        record = client.get(f"/analyses/{analysis_id}").json()
        if canonical in record["slices"]:
            return record
        time.sleep(0.05)
    raise AssertionError(f"slice {canonical} never completed")


def test_create_analysis_lifecycle(harness):
    _, _, _, _, client = harness
    res = client.post("/analyses", json=analysis_doc())
    assert res.status_code == 201
    record = res.json()
    assert record["state"] in ("queued", "materializing")
    done = wait_ready(client, record["id"])
    assert done["state"] == "ready", done.get("error")
    # pre-compute: empty slice + one per country value
    wait_slice(client, record["id"], "true")
    for country in ("US", "CA", "DE"):
        canonical = clause("country", "eq", country).canonical_string()
        wait_slice(client, record["id"], canonical)


def test_create_is_idempotent(harness):
    _, _, _, _, client = harness
    first = client.post("/analyses", json=analysis_doc())
    assert first.status_code == 201
    wait_ready(client, first.json()["id"])
    second = client.post("/analyses", json=analysis_doc())
    assert second.status_code == 200
    assert second.json()["id"] == first.json()["id"]


def test_validation_errors_are_4xx(harness):
    _, _, _, _, client = harness
    bad = analysis_doc(metrics=("nope",))
    res = client.post("/analyses", json=bad)
    assert res.status_code == 400
    assert res.json()["error"]["code"] == "validation_error"
    assert "nope" in res.json()["error"]["message"]


def test_list_analyses(harness):
    _, _, _, _, client = harness
    assert client.get("/analyses").json() == {"analyses": [], "total": 0}
    res = client.post("/analyses", json=analysis_doc())
    wait_ready(client, res.json()["id"])
    listing = client.get("/analyses").json()
    assert listing["total"] == 1
    assert listing["analyses"][0]["state"] == "ready"


def test_request_slice_and_fetch_scorecard(harness):
    _, _, _, _, client = harness
    record = client.post("/analyses", json=analysis_doc()).json()
    wait_ready(client, record["id"])
    wait_slice(client, record["id"], "true")

    pred = {"op": "and", "children": [
        {"col": "country", "cmp": "eq", "value": "US"},
        {"col": "device", "cmp": "eq", "value": "ios"}]}
    res = client.post(f"/analyses/{record['id']}/slices", json={"slice": pred})
    assert res.status_code in (200, 202)
    canonical = res.json()["slice"]
    wait_slice(client, record["id"], canonical)

    card = client.get(f"/analyses/{record['id']}/scorecards",
                      params={"slice": json.dumps(pred)})
    assert card.status_code == 200
    sc = parse_scorecard(card.content)
    assert sc.slice_canonical == canonical
    assert [m.name for m in sc.metrics] == list(analysis_doc()["metrics"])


def test_slice_cache_hit_across_spellings(harness):
    _, _, _, _, client = harness
    record = client.post("/analyses", json=analysis_doc()).json()
    wait_ready(client, record["id"])
    a = {"op": "and", "children": [
        {"col": "country", "cmp": "eq", "value": "US"},
        {"col": "device", "cmp": "eq", "value": "ios"}]}
    b = {"op": "and", "children": [
        {"col": "device", "cmp": "eq", "value": "ios"},
        {"col": "country", "cmp": "eq", "value": "US"}]}
    first = client.post(f"/analyses/{record['id']}/slices", json={"slice": a}).json()
    wait_slice(client, record["id"], first["slice"])
    second = client.post(f"/analyses/{record['id']}/slices", json={"slice": b})
    assert second.status_code == 200
    assert second.json()["cached"] is True
    assert second.json()["slice"] == first["slice"]


def test_concurrent_duplicate_requests_coalesce(harness):
    _, _, _, service, client = harness
    record = client.post("/analyses", json=analysis_doc()).json()
    wait_ready(client, record["id"])
    pred = clause("device", "eq", "android")
    out1 = service.request_slice(record["id"], pred)
    out2 = service.request_slice(record["id"], pred)
    if not out1["cached"] and not out2["cached"]:
        assert out1["job"]["job_id"] == out2["job"]["job_id"]
    wait_slice(client, record["id"], pred.canonical_string())


def test_invalid_slice_rejected(harness):
    _, _, _, _, client = harness
    record = client.post("/analyses", json=analysis_doc()).json()
    wait_ready(client, record["id"])
    res = client.post(f"/analyses/{record['id']}/slices",
                      json={"slice": {"col": "duration_seconds", "cmp": "gt",
                                      "value": 1}})
    assert res.status_code == 400


def test_unknown_scorecard_404_with_hint(harness):
    _, _, _, _, client = harness
    record = client.post("/analyses", json=analysis_doc()).json()
    wait_ready(client, record["id"])
    res = client.get(f"/analyses/{record['id']}/scorecards",
                     params={"slice": json.dumps({"col": "country", "cmp": "eq",
                                                  "value": "CA_nope"})})
    assert res.status_code == 404
    assert "request" in res.json()["error"]["message"]


def test_plots_endpoint(harness):
    _, _, _, _, client = harness
    record = client.post("/analyses", json=analysis_doc()).json()
    wait_ready(client, record["id"])
    wait_slice(client, record["id"], "true")
    res = client.get(f"/analyses/{record['id']}/plots",
                     params={"metric": "num_streamers", "kind": "ci-interval"})
    assert res.status_code == 200
    payload = res.json()
    assert payload["kind"] == "ci-interval"
    assert payload["series"]
    box = client.get(f"/analyses/{record['id']}/plots",
                     params={"metric": "hours_streamed", "kind": "box"})
    assert box.status_code == 200
    missing = client.get(f"/analyses/{record['id']}/plots",
                         params={"metric": "is_streamer", "kind": "timeseries"})
    assert missing.status_code == 422


def test_job_timing_invariant(harness):
    _, _, _, _, client = harness
    record = client.post("/analyses", json=analysis_doc()).json()
    wait_ready(client, record["id"])
    out = client.post(f"/analyses/{record['id']}/slices",
                      json={"slice": {"col": "device", "cmp": "eq", "value": "ios"}})
    if out.status_code == 202:
        job = wait_job(client, out.json()["job"]["job_id"])
        assert job["enqueued_at"] <= job["started_at"] <= job["ended_at"]


def test_status_endpoints_respond_while_jobs_run(harness):
    _, _, _, _, client = harness
    record = client.post("/analyses", json=analysis_doc()).json()
    # poll immediately while materialization is running
    t0 = time.time()
    res = client.get(f"/analyses/{record['id']}")
    assert res.status_code == 200
    assert time.time() - t0 < 1.0
    wait_ready(client, record["id"])


def test_cache_soundness_equals_fresh_computation(harness):
    tmp_path, data_dir, registry_dir, service, client = harness
    record = client.post("/analyses", json=analysis_doc()).json()
    wait_ready(client, record["id"])
    pred = clause("country", "eq", "CA")
    service.request_slice(record["id"], pred)
    wait_slice(client, record["id"], pred.canonical_string())
    cached = parse_scorecard(service.get_scorecard_bytes(
        record["id"], json.dumps(pred.to_doc())))

    # oracle: recompute from scratch outside the service
    from xp.service import engine
    stored = service.store.get_record(record["id"])
    phase1 = engine.materialize(stored.doc, service.registry, data_dir)
    fresh = engine.compute_scorecard(stored.doc, service.registry,
                                     stored.registry_version, phase1, pred,
                                     stored.seed, stored.created_at, stored.id)
    for got, want in zip(cached.metrics, fresh.metrics):
        assert got == want


def test_restart_preserves_scorecards_and_reenqueues(tmp_path, rng):
    data_dir, registry_dir, registry = standard_setup(tmp_path, rng)
    store_root = tmp_path / "store"
    service = AnalysisService(store_root, registry, data_dir, workers=2)
    client = TestClient(create_app(service))
    record = client.post("/analyses", json=analysis_doc()).json()
    wait_ready(client, record["id"])
    wait_slice(client, record["id"], "true")
    before = client.get(f"/analyses/{record['id']}/scorecards").content
    service.shutdown()

    # new service over the same store = restart
    registry2 = load_registry(registry_dir, data_dir)
    service2 = AnalysisService(store_root, registry2, data_dir, workers=2)
    client2 = TestClient(create_app(service2))
    after = client2.get(f"/analyses/{record['id']}/scorecards").content
    assert after == before
    # interrupted jobs from the log are terminal now
    for job in service2.jobs.values():
        assert job.state in ("done", "failed")
    # a new slice still computes after restart
    res = client2.post(f"/analyses/{record['id']}/slices",
                       json={"slice": {"col": "device", "cmp": "eq",
                                       "value": "android"}})
    assert res.status_code in (200, 202)
    canonical = res.json()["slice"]
    wait_slice(client2, record["id"], canonical)
    service2.shutdown()


def test_meta_analysis_flow(harness):
    _, _, _, _, client = harness
    record = client.post("/analyses", json=analysis_doc()).json()
    wait_ready(client, record["id"])
    wait_slice(client, record["id"], "true")

    changed = dict(metric_docs()[0])
    changed["where"] = {"col": "duration_seconds", "cmp": "gt", "value": 7200}
    res = client.post("/meta-analyses", json={"definition": changed,
                                              "analyses": [record["id"]]})
    assert res.status_code == 202
    job = wait_job(client, res.json()["job_id"])
    assert job["state"] == "done"
    report = client.get(f"/meta-analyses/{job['job_id']}").json()
    assert report["metric"] == "num_streamers"
    rows = report["analyses"][0]["rows"]
    assert rows and any(r["estimate_delta"] != 0.0 for r in rows)

    # identity replay: unchanged definition -> zero deltas
    res2 = client.post("/meta-analyses", json={"definition": metric_docs()[0],
                                               "analyses": [record["id"]]})
    job2 = wait_job(client, res2.json()["job_id"])
    report2 = client.get(f"/meta-analyses/{job2['job_id']}").json()
    for row in report2["analyses"][0]["rows"]:
        assert row["estimate_delta"] == 0.0
        assert not row["significance_flip"]

    # stored scorecards untouched by replays
    card = client.get(f"/analyses/{record['id']}/scorecards")
    assert card.status_code == 200
