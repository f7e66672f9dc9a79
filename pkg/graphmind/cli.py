"""The ``graphmind`` command.

Exit status is 0 on success, 1 when a graph, pipeline or replay fails, and 2
on usage or configuration errors.
"""

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from .audit import emit_audit, load_audit, replay
from .coordinator import prepare_graph, run_pipeline
from .exceptions import ConfigError, GraphmindError, PipelineError
from .graph import KnowledgeGraph, generate_graph, load_graph, stats, write_triples
from .logging import log_info
from .settings import PipelineConfig, RunConfig
from .utils import create_backend

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

AUDIT_FILENAME = "audit.json"
SUMMARY_FILENAME = "summary.json"

# flag destination -> ChainConfig field
CHAIN_FLAGS = {
    "max_turns": int,
    "n_q": int,
    "n_r": int,
    "k": int,
    "h": int,
    "n": int,
    "tau": float,
}


def _error(message: str) -> None:
    print(f"error: {message}", file=sys.stderr)


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    parser.add_argument("--script", type=Path, help="Replace the scripted backend's script")
    group = parser.add_argument_group("hyperparameter overrides")
    for name, kind in CHAIN_FLAGS.items():
        group.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphmind",
        description="Answer questions over a knowledge graph with auditable reasoning chains.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    kg = commands.add_parser("kg", help="Graph tooling").add_subparsers(
        dest="kg_command", required=True
    )
    for name, help_text in (("stats", "Print graph statistics"), ("validate", "Check a triple file")):
        sub = kg.add_parser(name, help=help_text)
        sub.add_argument("path", type=Path)
        sub.add_argument("--format", choices=["tsv", "jsonl"])
    gen = kg.add_parser("generate", help="Write a synthetic graph")
    gen.add_argument("--entities", type=int, required=True)
    gen.add_argument("--triples", type=int, required=True)
    gen.add_argument("--relations", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", type=Path, required=True)
    gen.add_argument("--format", choices=["tsv", "jsonl"], default="tsv")

    ask = commands.add_parser("ask", help="Answer one query")
    ask.add_argument("--query", required=True)
    ask.add_argument("--audit-out", type=Path, help="Directory for the audit record")
    _add_run_flags(ask)

    batch = commands.add_parser("batch", help="Answer a JSON-lines file of queries")
    batch.add_argument("--input", required=True, type=Path, help='One {"id", "query"} per line')
    batch.add_argument("--out", required=True, type=Path, help="Directory for audit records")
    batch.add_argument("--jobs", type=int, default=1, help="Queries run in parallel")
    _add_run_flags(batch)

    rep = commands.add_parser("replay", help="Re-run an audit record and compare answers")
    rep.add_argument("--audit", required=True, type=Path)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    chain = {name: getattr(args, name) for name in CHAIN_FLAGS if getattr(args, name) is not None}
    if chain:
        overrides["pipeline"] = {"chain": chain}
    if args.script is not None:
        overrides["backend"] = {"script": str(args.script)}
    if getattr(args, "audit_out", None) is not None:
        overrides["audit_dir"] = str(args.audit_out)
    return overrides


# Subcommands.


def _kg(args: argparse.Namespace) -> int:
    if args.kg_command == "generate":
        triples = generate_graph(args.entities, args.triples, args.relations, args.seed)
        write_triples(triples, args.out, args.format)
        print(f"wrote {len(triples)} triples to {args.out}")
        return EXIT_OK

    g = load_graph(args.path, args.format)
    summary = stats(g)
    if args.kg_command == "validate":
        print(f"OK: {summary.triple_count} triples, {summary.entity_count} entities")
        return EXIT_OK
    print(f"entities: {summary.entity_count}")
    print(f"triples: {summary.triple_count}")
    print(f"relations: {summary.relation_count}")
    for degree, count in summary.degree_histogram.items():
        print(f"degree {degree}: {count}")
    return EXIT_OK


def _load_run(args: argparse.Namespace):
    run_config = RunConfig.from_file(args.config, _overrides(args))
    pipeline = run_config.pipeline_config()
    g = prepare_graph(load_graph(run_config.graph.path, run_config.graph.format), pipeline)
    return run_config, pipeline, g


def _ask(args: argparse.Namespace) -> int:
    run_config, pipeline, g = _load_run(args)
    backend = create_backend(run_config.backend)
    try:
        answer, record = run_pipeline(args.query, g, pipeline, backend)
    except PipelineError as e:
        if e.audit is not None and run_config.audit_dir is not None:
            emit_audit(e.audit, run_config.audit_dir / AUDIT_FILENAME)
        raise
    finally:
        backend.close()
    if run_config.audit_dir is not None:
        emit_audit(record, run_config.audit_dir / AUDIT_FILENAME)
    print(answer)
    return EXIT_OK


def _read_jobs(path: Path) -> List[Dict[str, str]]:
    jobs = []
    seen = set()
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ConfigError(f"Cannot read batch input {str(path)!r}: {e}") from e
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            job = json.loads(line)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}:{lineno}: invalid JSON: {e.msg}") from e
        if not isinstance(job, dict) or not isinstance(job.get("id"), str) or not isinstance(
            job.get("query"), str
        ):
            raise ConfigError(f'{path}:{lineno}: expected {{"id": str, "query": str}}')
        if job["id"] in seen:
            raise ConfigError(f"{path}:{lineno}: duplicate id {job['id']!r}")
        seen.add(job["id"])
        jobs.append(job)
    return jobs


def _run_job(
    job: Dict[str, str], run_config: RunConfig, pipeline: PipelineConfig, g: KnowledgeGraph, out: Path
) -> Dict[str, Optional[str]]:
    try:
        with create_backend(run_config.backend) as backend:
            _, record = run_pipeline(job["query"], g, pipeline, backend)
    except PipelineError as e:
        if e.audit is not None:
            emit_audit(e.audit, out / f"{job['id']}.json")
        return {"id": job["id"], "status": "failed", "error": str(e)}
    except GraphmindError as e:
        return {"id": job["id"], "status": "failed", "error": str(e)}
    emit_audit(record, out / f"{job['id']}.json")
    return {"id": job["id"], "status": "completed", "error": None}


def _batch(args: argparse.Namespace) -> int:
    if args.jobs < 1:
        raise ConfigError("--jobs must be positive")
    run_config, pipeline, g = _load_run(args)
    jobs = _read_jobs(args.input)
    args.out.mkdir(parents=True, exist_ok=True)
    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        results = list(pool.map(lambda job: _run_job(job, run_config, pipeline, g, args.out), jobs))
    (args.out / SUMMARY_FILENAME).write_text(
        json.dumps(results, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    failed = sum(1 for r in results if r["status"] == "failed")
    log_info("Batch finished: {done} completed, {failed} failed", done=len(results) - failed, failed=failed)
    print(f"{len(results) - failed} completed, {failed} failed")
    return EXIT_FAILURE if failed else EXIT_OK


def _replay(args: argparse.Namespace) -> int:
    report = replay(load_audit(args.audit))
    print(report.status)
    for line in report.diff:
        print(line)
    return EXIT_OK if report.matched else EXIT_FAILURE


COMMANDS = {"kg": _kg, "ask": _ask, "batch": _batch, "replay": _replay}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        _error(str(e))
        return EXIT_USAGE
    except (GraphmindError, OSError) as e:
        _error(str(e))
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
