"""Service orchestration: job queue, worker pool, and the HTTP API.

Request handlers only validate, enqueue, and read persisted artifacts;
every heavy computation (materialization, slice evaluation, meta replay)
runs on the worker pool. Duplicate slice requests for one canonical
predicate coalesce into a single job. On startup the job log is replayed:
interrupted work is either re-enqueued (materializations, pending slices)
or marked failed, never silently lost.
"""

from __future__ import annotations

import json
import threading
import traceback
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

from ..errors import (CapabilityError, ConflictError, EngineError, NotFoundError,
                      ValidationError)
from ..metrics import MetricDefinition, MetricRegistry, validate_metric
from ..predicate import TRUE, Predicate, parse_predicate
from ..scorecard import parse_scorecard, render_plot_payload, serialize_scorecard
from ..table import read_schema
from . import engine
from .engine import AnalysisDocument, Phase1
from .store import AnalysisRecord, AnalysisStore, Job, new_job

PHASE1_CACHE_SIZE = 4


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def load_registry(registry_path: str | Path, data_dir: str | Path) -> MetricRegistry:
    """Registry file plus source schemas discovered from the data directory."""
    schemas = {}
    data_dir = Path(data_dir)
    for sidecar in data_dir.glob("*.csv.schema.json"):
        schemas[sidecar.name[:-len(".schema.json")]] = read_schema(sidecar)
    for csv_path in data_dir.glob("*.csv"):
        if csv_path.name not in schemas:
            from ..table import load_table

            schemas[csv_path.name] = load_table(csv_path).schema()
    registry_path = Path(registry_path)
    if registry_path.is_dir():
        registry_path = registry_path / "registry.json"
    if registry_path.exists():
        return MetricRegistry.load(registry_path, schemas)
    return MetricRegistry(schemas)


class AnalysisService:
    """Owns the store, the registry snapshot, and the worker pool."""

    def __init__(self, store_root: str | Path, registry: MetricRegistry,
                 data_dir: str | Path, workers: int | None = None):
        self.store = AnalysisStore(store_root)
        self.registry = registry
        self.data_dir = Path(data_dir)
        self.pool = ThreadPoolExecutor(max_workers=workers or 4,
                                       thread_name_prefix="xp-worker")
        self.jobs: dict[str, Job] = {}
        self._jobs_lock = threading.Lock()
        self._inflight: dict[tuple[str, str], str] = {}  # (analysis, slice) -> job id
        self._phase1_cache: dict[str, Phase1] = {}
        self._cache_lock = threading.Lock()
        self._recover()

    # -- lifecycle ---------------------------------------------------------

    def _recover(self):
        for job in self.store.replay_jobs().values():
            if job.state in ("pending", "running"):
                job.state = "failed"
                job.error = "interrupted by service restart"
                job.ended_at = job.started_at or job.enqueued_at
                self.store.append_job_event(job)
            self.jobs[job.job_id] = job
        for record in self.store.list_records():
            if record.state in ("queued", "materializing"):
                self._enqueue_materialize(record.id)
            elif record.state == "ready" and record.pending_slices:
                for canonical in list(record.pending_slices):
                    pred = parse_predicate(json.loads(canonical))
                    job = new_job("slice", record.id, canonical)
                    with self._jobs_lock:
                        self.jobs[job.job_id] = job
                        self._inflight[(record.id, canonical)] = job.job_id
                    self.store.append_job_event(job)
                    self.pool.submit(self._run_slice, job, pred)

    def shutdown(self):
        self.pool.shutdown(wait=True)

    # -- job plumbing ------------------------------------------------------

    def _track(self, job: Job) -> Job:
        with self._jobs_lock:
            self.jobs[job.job_id] = job
        self.store.append_job_event(job)
        return job

    def _transition(self, job: Job, state: str, error: str | None = None,
                    result_ref: str | None = None):
        import time

        job.state = state
        if state == "running":
            job.started_at = time.time()
        if state in ("done", "failed"):
            job.ended_at = time.time()
        if error is not None:
            job.error = error
        if result_ref is not None:
            job.result_ref = result_ref
        self.store.append_job_event(job)

    def get_job(self, job_id: str) -> Job:
        job = self.jobs.get(job_id)
        if job is None:
            raise NotFoundError(f"no job {job_id!r}")
        return job

    # -- analyses ----------------------------------------------------------

    def create_analysis(self, doc_dict: dict) -> tuple[AnalysisRecord, bool]:
        """Returns (record, created); resubmitting an identical spec is a no-op."""
        doc = AnalysisDocument.from_doc(doc_dict)
        doc.validate(self.registry)
        analysis_id = engine.analysis_id(doc, self.registry.version, self.data_dir)
        if self.store.exists(analysis_id):
            return self.store.get_record(analysis_id), False
        seed = doc.seed if doc.seed is not None else engine.derive_seed(analysis_id)
        record = AnalysisRecord(
            id=analysis_id, doc=doc, registry_version=self.registry.version,
            state="queued", created_at=now_iso(), seed=seed)
        record = self.store.create_record(record)
        self._enqueue_materialize(analysis_id)
        return record, True

    def _enqueue_materialize(self, analysis_id: str):
        job = self._track(new_job("materialize", analysis_id))
        self.pool.submit(self._run_materialize, job)

    def _run_materialize(self, job: Job):
        self._transition(job, "running")
        try:
            record = self.store.get_record(job.analysis_id)
            self.store.update_record(job.analysis_id,
                                     lambda r: setattr(r, "state", "materializing"))
            phase1 = engine.materialize(record.doc, self.registry, self.data_dir)
            self.store.save_phase1(job.analysis_id, phase1)
            self._cache_phase1(job.analysis_id, phase1)

            def mark_ready(r):
                r.state = "ready"
                r.fingerprint = phase1.fingerprint
                r.error = None

            self.store.update_record(job.analysis_id, mark_ready)
            self._transition(job, "done")
            for pred in engine.default_precompute_slices(record.doc, phase1.units):
                self.request_slice(job.analysis_id, pred)
        except Exception as err:  # failure must land in the record, not a thread
            detail = f"{type(err).__name__}: {err}"
            if not isinstance(err, EngineError):
                detail += "\n" + traceback.format_exc(limit=5)

            def mark_failed(r):
                r.state = "failed"
                r.error = detail

            self.store.update_record(job.analysis_id, mark_failed)
            self._transition(job, "failed", error=detail)

    def _cache_phase1(self, analysis_id: str, phase1: Phase1):
        with self._cache_lock:
            self._phase1_cache[analysis_id] = phase1
            while len(self._phase1_cache) > PHASE1_CACHE_SIZE:
                self._phase1_cache.pop(next(iter(self._phase1_cache)))

    def _get_phase1(self, analysis_id: str) -> Phase1:
        with self._cache_lock:
            cached = self._phase1_cache.get(analysis_id)
        if cached is not None:
            return cached
        phase1 = self.store.load_phase1(analysis_id)
        self._cache_phase1(analysis_id, phase1)
        return phase1

    # -- slices --------------------------------------------------------------

    def request_slice(self, analysis_id: str, pred: Predicate | dict | bool
                      ) -> dict:
        """Cache hit returns the scorecard reference; miss enqueues one job."""
        if not isinstance(pred, Predicate):
            pred = parse_predicate(pred)
        record = self.store.get_record(analysis_id)
        if record.state != "ready":
            raise ConflictError(
                f"analysis {analysis_id!r} is {record.state}, not ready")
        phase1 = self._get_phase1(analysis_id)
        engine.validate_slice(record.doc, pred, phase1.units)
        canonical = pred.canonical_string()
        if canonical in record.slices:
            return {"cached": True, "slice": canonical,
                    "scorecard": record.slices[canonical]}
        key = (analysis_id, canonical)
        with self._jobs_lock:
            existing = self._inflight.get(key)
            if existing is not None:
                return {"cached": False, "slice": canonical,
                        "job": self.jobs[existing].to_doc()}
            job = new_job("slice", analysis_id, canonical)
            self.jobs[job.job_id] = job
            self._inflight[key] = job.job_id
        self.store.append_job_event(job)
        self.store.update_record(
            analysis_id,
            lambda r: r.pending_slices.append(canonical)
            if canonical not in r.pending_slices else None)
        self.pool.submit(self._run_slice, job, pred)
        return {"cached": False, "slice": canonical, "job": job.to_doc()}

    def _run_slice(self, job: Job, pred: Predicate):
        self._transition(job, "running")
        canonical = job.slice_canonical
        try:
            record = self.store.get_record(job.analysis_id)
            phase1 = self._get_phase1(job.analysis_id)
            scorecard = engine.compute_scorecard(
                record.doc, self.registry, record.registry_version, phase1, pred,
                record.seed, record.created_at, record.id)
            raw = serialize_scorecard(scorecard)
            name = self.store.save_scorecard(job.analysis_id, canonical, raw)

            def attach(r):
                r.slices[canonical] = name
                if canonical in r.pending_slices:
                    r.pending_slices.remove(canonical)

            self.store.update_record(job.analysis_id, attach)
            self._transition(job, "done", result_ref=name)
        except Exception as err:
            detail = f"{type(err).__name__}: {err}"
            if not isinstance(err, EngineError):
                detail += "\n" + traceback.format_exc(limit=5)
            self.store.update_record(
                job.analysis_id,
                lambda r: r.pending_slices.remove(canonical)
                if canonical in r.pending_slices else None)
            self._transition(job, "failed", error=detail)
        finally:
            with self._jobs_lock:
                self._inflight.pop((job.analysis_id, canonical), None)

    def get_scorecard_bytes(self, analysis_id: str, slice_param: str | None) -> bytes:
        canonical = _canonical_from_param(slice_param)
        return self.store.read_scorecard(analysis_id, canonical)

    def render_payload(self, analysis_id: str, slice_param: str | None, metric: str,
                       kind: str) -> dict:
        raw = self.get_scorecard_bytes(analysis_id, slice_param)
        return render_plot_payload(parse_scorecard(raw), metric, kind).to_doc()

    # -- meta-analysis -------------------------------------------------------

    def meta_analyze(self, definition_doc: dict, analysis_ids: list[str]) -> Job:
        definition = MetricDefinition.from_doc(definition_doc)
        schema = self.registry.schemas.get(definition.source)
        if schema is not None:
            diagnostics = validate_metric(definition, schema)
            if diagnostics:
                raise ValidationError("changed definition invalid: "
                                      + "; ".join(diagnostics))
        for analysis_id in analysis_ids:
            record = self.store.get_record(analysis_id)  # raises NotFound
            if record.state != "ready":
                raise ConflictError(f"analysis {analysis_id!r} is {record.state}")
        job = self._track(new_job("meta-replay", None))
        self.pool.submit(self._run_meta, job, definition, list(analysis_ids))
        return job

    def _run_meta(self, job: Job, definition: MetricDefinition,
                  analysis_ids: list[str]):
        self._transition(job, "running")
        entries = []
        for analysis_id in analysis_ids:
            try:
                record = self.store.get_record(analysis_id)
                phase1 = self._get_phase1(analysis_id)
                old = None
                empty_key = TRUE.canonical_string()
                if empty_key in record.slices:
                    old = parse_scorecard(
                        self.store.read_scorecard(analysis_id, empty_key))
                entries.append(engine.meta_replay(
                    definition, record.doc, self.registry, record.registry_version,
                    phase1, record.seed, analysis_id, old))
            except Exception as err:  # per-analysis failures, others proceed
                entries.append({"analysis_id": analysis_id,
                                "error": f"{type(err).__name__}: {err}"})
        report = {"metric": definition.name, "definition": definition.to_doc(),
                  "analyses": entries}
        name = self.store.save_meta_report(job.job_id, report)
        self._transition(job, "done", result_ref=name)


def _canonical_from_param(slice_param: str | None) -> str:
    if slice_param is None or slice_param == "":
        return TRUE.canonical_string()
    try:
        doc = json.loads(slice_param)
    except json.JSONDecodeError:
        raise ValidationError(f"slice parameter is not JSON: {slice_param!r}") from None
    return parse_predicate(doc).canonical_string()


# -- HTTP layer ---------------------------------------------------------------


def create_app(service: AnalysisService, ui_dir: str | Path | None = None):
    from fastapi import FastAPI, Request
    from fastapi.responses import JSONResponse, Response

    app = FastAPI(title="experiment analysis service", version="0.1.0")

    @app.exception_handler(EngineError)
    async def engine_error_handler(request: Request, err: EngineError):
        status = 500
        if isinstance(err, NotFoundError):
            status = 404
        elif isinstance(err, ConflictError):
            status = 409
        elif isinstance(err, CapabilityError):
            status = 422
        elif isinstance(err, ValidationError):
            status = 400
        return JSONResponse(status_code=status, content={"error": err.to_dict()})

    @app.post("/analyses")
    def post_analysis(doc: dict):
        record, created = service.create_analysis(doc)
        return JSONResponse(status_code=201 if created else 200,
                            content=record.to_doc())

    @app.get("/analyses")
    def list_analyses(limit: int = 100, offset: int = 0):
        records = service.store.list_records()
        page = records[offset:offset + limit]
        return {"analyses": [r.summary() for r in page], "total": len(records)}

    @app.get("/analyses/{analysis_id}")
    def get_analysis(analysis_id: str):
        return service.store.get_record(analysis_id).to_doc()

    @app.post("/analyses/{analysis_id}/slices")
    def post_slice(analysis_id: str, body: dict):
        if "slice" not in body:
            raise ValidationError('body must be {"slice": <predicate>}')
        outcome = service.request_slice(analysis_id, body["slice"])
        return JSONResponse(status_code=200 if outcome["cached"] else 202,
                            content=outcome)

    @app.get("/analyses/{analysis_id}/scorecards")
    def get_scorecard(analysis_id: str, slice: str | None = None):
        raw = service.get_scorecard_bytes(analysis_id, slice)
        return Response(content=raw, media_type="application/json")

    @app.get("/analyses/{analysis_id}/plots")
    def get_plot(analysis_id: str, metric: str, kind: str, slice: str | None = None):
        return service.render_payload(analysis_id, slice, metric, kind)

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        return service.get_job(job_id).to_doc()

    @app.post("/meta-analyses")
    def post_meta(body: dict):
        for key in ("definition", "analyses"):
            if key not in body:
                raise ValidationError(f'body must carry {key!r}')
        job = service.meta_analyze(body["definition"], body["analyses"])
        return JSONResponse(status_code=202, content=job.to_doc())

    @app.get("/meta-analyses/{job_id}")
    def get_meta(job_id: str):
        return service.store.read_meta_report(job_id)

    if ui_dir is not None and Path(ui_dir).exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
