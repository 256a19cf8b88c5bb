"""Command line entry point: offline analysis runs and the HTTP service.

Machine-readable output goes to stdout, progress lines to stderr. All
randomness flows from one seed: --seed, else the spec's seed, else a value
derived from the analysis content hash. Exit codes: 0 success, 1 failed
validation, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import EngineError, ValidationError
from .metrics import MetricDefinition, load_metric, validate_metric
from .predicate import TRUE, parse_predicate
from .scorecard import parse_scorecard, serialize_scorecard
from .service import engine
from .service.app import AnalysisService, load_registry, now_iso
from .service.store import AnalysisRecord, AnalysisStore


def note(message: str):
    print(message, file=sys.stderr)


def emit(payload):
    print(json.dumps(payload, sort_keys=True, indent=2))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xp", description="experiment analysis engine")
    sub = parser.add_subparsers(dest="command", required=True)

    metric = sub.add_parser("metric", help="metric definition tooling")
    metric_sub = metric.add_subparsers(dest="metric_command", required=True)
    for name in ("validate", "register"):
        p = metric_sub.add_parser(name)
        p.add_argument("file", help="metric definition document (JSON)")
        p.add_argument("--registry", default="registry",
                       help="registry directory or file")
        p.add_argument("--data-dir", default=".", help="directory with source CSVs")

    analyze = sub.add_parser("analyze", help="run a full analysis offline")
    analyze.add_argument("spec", help="analysis spec document (JSON)")
    analyze.add_argument("--out", required=True, help="output store directory")
    analyze.add_argument("--data-dir", default=".")
    analyze.add_argument("--registry", default="registry")
    analyze.add_argument("--seed", type=int, default=None)

    slice_cmd = sub.add_parser("slice", help="compute one slice offline")
    slice_cmd.add_argument("analysis_id")
    slice_cmd.add_argument("predicate", help="predicate JSON (inline or @file)")
    slice_cmd.add_argument("--store", required=True)
    slice_cmd.add_argument("--data-dir", default=".")
    slice_cmd.add_argument("--registry", default="registry")

    card = sub.add_parser("scorecard", help="print a stored scorecard")
    card.add_argument("analysis_id")
    card.add_argument("--slice", default=None, help="predicate JSON; empty slice if omitted")
    card.add_argument("--store", required=True)

    meta = sub.add_parser("meta", help="replay a changed metric over stored analyses")
    meta.add_argument("file", help="changed metric definition (JSON)")
    meta.add_argument("--analyses", required=True,
                      help="comma-separated analysis ids, or 'all'")
    meta.add_argument("--store", required=True)
    meta.add_argument("--data-dir", default=".")
    meta.add_argument("--registry", default="registry")

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--store", required=True)
    serve.add_argument("--data-dir", default=".")
    serve.add_argument("--registry", default="registry")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8321)
    serve.add_argument("--workers", type=int, default=None)
    serve.add_argument("--ui", default=None, help="directory with built UI assets")
    return parser


def _registry_file(registry_arg: str) -> Path:
    path = Path(registry_arg)
    return path / "registry.json" if path.suffix != ".json" else path


def cmd_metric(args) -> int:
    registry = load_registry(args.registry, args.data_dir)
    definition = load_metric(args.file)
    schema = registry.schemas.get(definition.source)
    if schema is None:
        note(f"error: unknown source table {definition.source!r} in {args.data_dir}")
        return 1
    diagnostics = validate_metric(definition, schema)
    if args.metric_command == "validate":
        if diagnostics:
            emit({"valid": False, "diagnostics": diagnostics})
            return 1
        return 0
    if diagnostics:
        emit({"registered": False, "diagnostics": diagnostics})
        return 1
    version = registry.register(definition)
    registry_file = _registry_file(args.registry)
    registry_file.parent.mkdir(parents=True, exist_ok=True)
    registry.save(registry_file)
    note(f"registered {definition.name!r} at version {version}")
    emit({"registered": True, "name": definition.name, "version": version})
    return 0


def run_offline_analysis(spec_path: str, out: str, data_dir: str, registry_arg: str,
                         seed: int | None) -> dict:
    registry = load_registry(registry_arg, data_dir)
    doc_dict = json.loads(Path(spec_path).read_text(encoding="utf-8"))
    if seed is not None:
        doc_dict["seed"] = seed
    doc = engine.AnalysisDocument.from_doc(doc_dict)
    doc.validate(registry)
    analysis_id = engine.analysis_id(doc, registry.version, data_dir)
    store = AnalysisStore(out)

    if store.exists(analysis_id):
        record = store.get_record(analysis_id)  # keep created_at stable on re-runs
        note(f"analysis {analysis_id[:12]} already recorded; recomputing")
    else:
        record = store.create_record(AnalysisRecord(
            id=analysis_id, doc=doc, registry_version=registry.version,
            state="queued", created_at=now_iso(),
            seed=doc.seed if doc.seed is not None
            else engine.derive_seed(analysis_id)))

    note("materializing phase-1 tables")
    phase1 = engine.materialize(doc, registry, data_dir)
    store.save_phase1(analysis_id, phase1)

    def mark_ready(r):
        r.state = "ready"
        r.fingerprint = phase1.fingerprint
        r.error = None

    store.update_record(analysis_id, mark_ready)
    slices = engine.default_precompute_slices(doc, phase1.units)
    written = []
    for pred in slices:
        canonical = pred.canonical_string()
        note(f"computing slice {canonical}")
        scorecard = engine.compute_scorecard(
            doc, registry, record.registry_version, phase1, pred, record.seed,
            record.created_at, analysis_id)
        name = store.save_scorecard(analysis_id, canonical, serialize_scorecard(scorecard))
        store.update_record(analysis_id,
                            lambda r, c=canonical, n=name: r.slices.update({c: n}))
        written.append({"slice": canonical, "file": name})
    return {"analysis_id": analysis_id, "state": "ready", "seed": record.seed,
            "scorecards": written}


def cmd_analyze(args) -> int:
    emit(run_offline_analysis(args.spec, args.out, args.data_dir, args.registry,
                              args.seed))
    return 0


def cmd_slice(args) -> int:
    registry = load_registry(args.registry, args.data_dir)
    store = AnalysisStore(args.store)
    record = store.get_record(args.analysis_id)
    raw = args.predicate
    if raw.startswith("@"):
        raw = Path(raw[1:]).read_text(encoding="utf-8")
    pred = parse_predicate(json.loads(raw))
    phase1 = store.load_phase1(args.analysis_id)
    scorecard = engine.compute_scorecard(
        record.doc, registry, record.registry_version, phase1, pred, record.seed,
        record.created_at, record.id)
    canonical = pred.canonical_string()
    name = store.save_scorecard(record.id, canonical, serialize_scorecard(scorecard))
    store.update_record(record.id,
                        lambda r: r.slices.update({canonical: name}))
    emit({"analysis_id": record.id, "slice": canonical, "file": name})
    return 0


def cmd_scorecard(args) -> int:
    store = AnalysisStore(args.store)
    canonical = TRUE.canonical_string() if args.slice is None else \
        parse_predicate(json.loads(args.slice)).canonical_string()
    sys.stdout.write(store.read_scorecard(args.analysis_id, canonical).decode("utf-8"))
    return 0


def cmd_meta(args) -> int:
    registry = load_registry(args.registry, args.data_dir)
    store = AnalysisStore(args.store)
    changed = load_metric(args.file)
    if args.analyses == "all":
        ids = [r.id for r in store.list_records() if r.state == "ready"]
    else:
        ids = [s for s in args.analyses.split(",") if s]
    entries = []
    for analysis_id in ids:
        try:
            record = store.get_record(analysis_id)
            phase1 = store.load_phase1(analysis_id)
            old = None
            empty_key = TRUE.canonical_string()
            if empty_key in record.slices:
                old = parse_scorecard(store.read_scorecard(analysis_id, empty_key))
            entries.append(engine.meta_replay(
                changed, record.doc, registry, record.registry_version, phase1,
                record.seed, analysis_id, old))
        except EngineError as err:
            entries.append({"analysis_id": analysis_id, "error": err.message})
    emit({"metric": changed.name, "analyses": entries})
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service.app import create_app

    registry = load_registry(args.registry, args.data_dir)
    service = AnalysisService(args.store, registry, args.data_dir,
                              workers=args.workers)
    app = create_app(service, ui_dir=args.ui)
    note(f"serving on http://{args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


COMMANDS = {
    "metric": cmd_metric,
    "analyze": cmd_analyze,
    "slice": cmd_slice,
    "scorecard": cmd_scorecard,
    "meta": cmd_meta,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exit_err:
        return 1 if exit_err.code not in (0, None) else 0
    try:
        return COMMANDS[args.command](args)
    except ValidationError as err:
        note(f"validation error: {err.message}")
        return 1
    except EngineError as err:
        note(f"error: {err.message}")
        return 2
    except Exception as err:  # noqa: BLE001 - last-resort CLI guard
        note(f"unexpected error: {type(err).__name__}: {err}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
