"""Audit records on disk, and replaying them."""

import difflib
from pathlib import Path
from typing import List, Optional, Union

from .backends import script_from_audit
from .coordinator import run_pipeline
from .exceptions import ConfigError, PipelineError
from .graph import KnowledgeGraph, load_graph
from .logging import log_info, logger
from .models import AuditRecord, GMBaseModel


class ReplayReport(GMBaseModel):
    expected: Optional[str]
    actual: Optional[str]
    # True when the replayed record equals the recorded one, wall-clock fields aside.
    audit_matches: bool
    diff: List[str]

    @property
    def matched(self) -> bool:
        return self.expected == self.actual

    @property
    def status(self) -> str:
        return "MATCH" if self.matched else "MISMATCH"


def emit_audit(record: AuditRecord, path: Union[str, Path]) -> Path:
    """Write ``record`` as UTF-8 JSON, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(record.model_dump_json(indent=2) + "\n", encoding="utf-8")
    log_info("Wrote audit record to {path}", path=str(path))
    return path


def load_audit(path: Union[str, Path]) -> AuditRecord:
    return AuditRecord.model_validate_json(Path(path).read_text(encoding="utf-8"))


@logger
def replay(record: AuditRecord, g: Optional[KnowledgeGraph] = None) -> ReplayReport:
    """Re-run a recorded query from its recorded generations and compare.

    The graph is reloaded from the recorded source unless ``g`` is given.
    """
    if g is None:
        source = record.config.graph
        if source is None:
            raise ConfigError("The audit record names no graph source to replay against.")
        g = load_graph(source.path, source.format)

    try:
        actual, replayed = run_pipeline(
            record.query, g, record.config.pipeline, script_from_audit(record)
        )
    except PipelineError as e:
        actual, replayed = None, e.audit

    expected = record.final_answer
    diff = list(
        difflib.unified_diff(
            (expected or "").splitlines(),
            (actual or "").splitlines(),
            fromfile="recorded",
            tofile="replayed",
            lineterm="",
        )
    )
    return ReplayReport(
        expected=expected,
        actual=actual,
        audit_matches=replayed is not None and replayed.comparable() == record.comparable(),
        diff=diff,
    )
