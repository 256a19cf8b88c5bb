"""Durable analysis store: a directory per analysis, plus a job log.

Layout under the store root:

    analyses/<id>/record.json            analysis spec, state, slice index
    analyses/<id>/phase1/                cached materialized tables
    analyses/<id>/scorecards/<key>.json  immutable slice scorecards
    meta/<job_id>.json                   meta-analysis reports
    jobs.jsonl                           append-only job state transitions

Records are rewritten atomically (tmp + rename); scorecards are written
once and never mutated, so a crash can lose at most in-flight work, which
the job log reveals on restart.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ConflictError, NotFoundError, ValidationError
from .engine import AnalysisDocument, Phase1, load_phase1, save_phase1

STATES = ("queued", "materializing", "ready", "failed")
JOB_STATES = ("pending", "running", "done", "failed")
JOB_KINDS = ("materialize", "slice", "meta-replay")


def _atomic_write(path: Path, data: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def slice_key(canonical: str) -> str:
    import hashlib

    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass
class AnalysisRecord:
    id: str
    doc: AnalysisDocument
    registry_version: int
    state: str
    created_at: str
    seed: int
    fingerprint: str | None = None
    error: str | None = None
    slices: dict = field(default_factory=dict)  # canonical -> scorecard file name
    pending_slices: list = field(default_factory=list)

    def to_doc(self) -> dict:
        return {
            "id": self.id,
            "spec": self.doc.to_doc(),
            "registry_version": self.registry_version,
            "state": self.state,
            "created_at": self.created_at,
            "seed": self.seed,
            "fingerprint": self.fingerprint,
            "error": self.error,
            "slices": dict(sorted(self.slices.items())),
            "pending_slices": sorted(self.pending_slices),
        }

    def summary(self) -> dict:
        return {
            "id": self.id,
            "name": self.doc.name,
            "state": self.state,
            "created_at": self.created_at,
            "metrics": list(self.doc.metrics),
            "dimensions": list(self.doc.dimensions),
            "slice_count": len(self.slices),
            "error": self.error,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> AnalysisRecord:
        return cls(
            id=doc["id"], doc=AnalysisDocument.from_doc(doc["spec"]),
            registry_version=doc["registry_version"], state=doc["state"],
            created_at=doc["created_at"], seed=doc["seed"],
            fingerprint=doc.get("fingerprint"), error=doc.get("error"),
            slices=dict(doc.get("slices", {})),
            pending_slices=list(doc.get("pending_slices", [])))


@dataclass
class Job:
    job_id: str
    kind: str
    analysis_id: str | None
    state: str
    slice_canonical: str | None = None
    enqueued_at: float = 0.0
    started_at: float | None = None
    ended_at: float | None = None
    error: str | None = None
    result_ref: str | None = None

    def to_doc(self) -> dict:
        return {
            "job_id": self.job_id,
            "kind": self.kind,
            "analysis_id": self.analysis_id,
            "state": self.state,
            "slice": self.slice_canonical,
            "enqueued_at": self.enqueued_at,
            "started_at": self.started_at,
            "ended_at": self.ended_at,
            "error": self.error,
            "result_ref": self.result_ref,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> Job:
        return cls(job_id=doc["job_id"], kind=doc["kind"],
                   analysis_id=doc.get("analysis_id"), state=doc["state"],
                   slice_canonical=doc.get("slice"),
                   enqueued_at=doc.get("enqueued_at", 0.0),
                   started_at=doc.get("started_at"), ended_at=doc.get("ended_at"),
                   error=doc.get("error"), result_ref=doc.get("result_ref"))


def new_job(kind: str, analysis_id: str | None, slice_canonical: str | None = None
            ) -> Job:
    return Job(job_id=uuid.uuid4().hex[:16], kind=kind, analysis_id=analysis_id,
               state="pending", slice_canonical=slice_canonical,
               enqueued_at=time.time())


class AnalysisStore:
    """Single-writer persistence for records, phase-1 caches, and scorecards."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        (self.root / "analyses").mkdir(parents=True, exist_ok=True)
        (self.root / "meta").mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._jobs_lock = threading.Lock()

    # -- records ---------------------------------------------------------

    def _record_path(self, analysis_id: str) -> Path:
        return self.root / "analyses" / analysis_id / "record.json"

    def exists(self, analysis_id: str) -> bool:
        return self._record_path(analysis_id).exists()

    def create_record(self, record: AnalysisRecord) -> AnalysisRecord:
        with self._lock:
            if self.exists(record.id):
                return self.get_record(record.id)
            path = self._record_path(record.id)
            path.parent.mkdir(parents=True, exist_ok=True)
            (path.parent / "scorecards").mkdir(exist_ok=True)
            self._write_record(record)
            return record

    def _write_record(self, record: AnalysisRecord):
        raw = (json.dumps(record.to_doc(), sort_keys=True, indent=2) + "\n").encode()
        _atomic_write(self._record_path(record.id), raw)

    def get_record(self, analysis_id: str) -> AnalysisRecord:
        path = self._record_path(analysis_id)
        if not path.exists():
            raise NotFoundError(f"no analysis {analysis_id!r}")
        return AnalysisRecord.from_doc(json.loads(path.read_text(encoding="utf-8")))

    def list_records(self) -> list[AnalysisRecord]:
        records = []
        for record_path in sorted((self.root / "analyses").glob("*/record.json")):
            records.append(AnalysisRecord.from_doc(
                json.loads(record_path.read_text(encoding="utf-8"))))
        records.sort(key=lambda r: (r.created_at, r.id))
        return records

    def update_record(self, analysis_id: str, mutate) -> AnalysisRecord:
        """Apply a mutation under the store lock and persist atomically."""
        with self._lock:
            record = self.get_record(analysis_id)
            mutate(record)
            if record.state not in STATES:
                raise ValidationError(f"illegal analysis state {record.state!r}")
            self._write_record(record)
            return record

    # -- phase-1 cache -----------------------------------------------------

    def phase1_dir(self, analysis_id: str) -> Path:
        return self.root / "analyses" / analysis_id / "phase1"

    def save_phase1(self, analysis_id: str, phase1: Phase1):
        save_phase1(phase1, self.phase1_dir(analysis_id))

    def load_phase1(self, analysis_id: str) -> Phase1:
        directory = self.phase1_dir(analysis_id)
        if not (directory / "events.csv").exists():
            raise NotFoundError(f"analysis {analysis_id!r} has no cached "
                                "materialization")
        return load_phase1(directory)

    # -- scorecards --------------------------------------------------------

    def scorecard_path(self, analysis_id: str, canonical: str) -> Path:
        return (self.root / "analyses" / analysis_id / "scorecards"
                / f"{slice_key(canonical)}.json")

    def save_scorecard(self, analysis_id: str, canonical: str, raw: bytes) -> str:
        path = self.scorecard_path(analysis_id, canonical)
        path.parent.mkdir(parents=True, exist_ok=True)
        _atomic_write(path, raw)
        return path.name

    def read_scorecard(self, analysis_id: str, canonical: str) -> bytes:
        record = self.get_record(analysis_id)
        name = record.slices.get(canonical)
        if name is None:
            raise NotFoundError(
                f"slice {canonical} not computed for analysis {analysis_id!r}; "
                "request it via the slices endpoint")
        return (self.root / "analyses" / analysis_id / "scorecards" / name).read_bytes()

    # -- meta reports ------------------------------------------------------

    def save_meta_report(self, job_id: str, report: dict) -> str:
        path = self.root / "meta" / f"{job_id}.json"
        _atomic_write(path, (json.dumps(report, sort_keys=True, indent=2) + "\n")
                      .encode())
        return path.name

    def read_meta_report(self, job_id: str) -> dict:
        path = self.root / "meta" / f"{job_id}.json"
        if not path.exists():
            raise NotFoundError(f"no meta-analysis report for job {job_id!r}")
        return json.loads(path.read_text(encoding="utf-8"))

    # -- job log -----------------------------------------------------------

    def append_job_event(self, job: Job):
        line = json.dumps(job.to_doc(), sort_keys=True) + "\n"
        with self._jobs_lock:
            with open(self.root / "jobs.jsonl", "a", encoding="utf-8") as fh:
                fh.write(line)

    def replay_jobs(self) -> dict[str, Job]:
        """Last known state per job id, reconstructed from the log."""
        path = self.root / "jobs.jsonl"
        jobs: dict[str, Job] = {}
        if not path.exists():
            return jobs
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            try:
                job = Job.from_doc(json.loads(line))
            except (json.JSONDecodeError, KeyError):
                continue  # torn write at crash; later events supersede
            jobs[job.job_id] = job
        return jobs
