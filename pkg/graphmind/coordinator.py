"""Pipeline orchestration over a shared single-assignment workspace.

Stages publish their output under a key and fire when all their input keys
have settled: ``decomposition`` starts one chain per sub-question, the
``chain:{i}`` keys feed conflict resolution under ``conflicts``, which feeds
the ``final`` answer.
"""

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from typing import Any, Callable, Dict, Iterable, List, Literal, Optional, Tuple, Union

from .backends import BaseBackend
from .decomposer import decompose, single_question
from .exceptions import GraphmindError, PipelineError, WorkspaceError
from .graph import KnowledgeGraph, restrict_relations
from .logging import log_info, log_warning, logger
from .models import (
    AuditConfig,
    AuditRecord,
    ConflictReport,
    DecompositionResult,
    GMBaseModel,
    ReasoningChain,
    SubAnswer,
)
from .retriever import run_chain
from .settings import ChainConfig, PipelineConfig
from .synthesizer import TermNormalizer, detect_conflicts, join_answers, resolve, synthesize

KEY_STATUS = Literal["pending", "ready", "failed"]

DECOMPOSITION = "decomposition"
CONFLICTS = "conflicts"
FINAL = "final"


def chain_key(index: int) -> str:
    return f"chain:{index}"


class Workspace:
    """Keyed single-assignment store shared by the pipeline stages.

    Every key moves from pending to ready or failed exactly once. Writers on
    distinct keys and readers may run concurrently.
    """

    def __init__(self):
        self._payloads: Dict[str, Any] = {}
        self._status: Dict[str, KEY_STATUS] = {}
        self._cond = threading.Condition()
        self._subscriptions: List[Tuple[frozenset, Callable[["Workspace"], None]]] = []

    def status(self, key: str) -> KEY_STATUS:
        with self._cond:
            return self._status.get(key, "pending")

    def _settle(self, key: str, status: KEY_STATUS, payload: Any) -> KEY_STATUS:
        with self._cond:
            if key in self._status:
                raise WorkspaceError(f"Workspace key {key!r} is already {self._status[key]}.")
            self._payloads[key] = payload
            self._status[key] = status
            due = [s for s in self._subscriptions if s[0] <= self._status.keys()]
            self._subscriptions = [s for s in self._subscriptions if s not in due]
            self._cond.notify_all()
        for _, callback in due:
            callback(self)
        return status

    def put(self, key: str, payload: Any) -> KEY_STATUS:
        """Publish ``payload`` under a pending ``key``."""
        return self._settle(key, "ready", payload)

    def fail(self, key: str, payload: Any = None) -> KEY_STATUS:
        """Mark a pending ``key`` failed; ``payload`` describes the failure."""
        return self._settle(key, "failed", payload)

    def get(
        self, key: str, *, wait: bool = False, timeout: Optional[float] = None
    ) -> Tuple[KEY_STATUS, Any]:
        """``(status, payload)``; the payload is ``None`` while pending.

        With ``wait``, block until the key settles or ``timeout`` passes.
        """
        with self._cond:
            if wait:
                self._cond.wait_for(lambda: key in self._status, timeout)
            status = self._status.get(key, "pending")
            return status, self._payloads.get(key)

    def subscribe(self, keys: Iterable[str], callback: Callable[["Workspace"], None]) -> None:
        """Call ``callback(workspace)`` once every key in ``keys`` has settled."""
        keys = frozenset(keys)
        with self._cond:
            ready = keys <= self._status.keys()
            if not ready:
                self._subscriptions.append((keys, callback))
        if ready:
            callback(self)

    def keys(self) -> List[str]:
        with self._cond:
            return sorted(self._status)


class Verification(GMBaseModel):
    """What conflict resolution publishes: the surviving answers and the reports."""

    verified: List[SubAnswer]
    conflicts: List[ConflictReport]


def prepare_graph(g: KnowledgeGraph, pipeline: PipelineConfig) -> KnowledgeGraph:
    """Apply the relation allow-list, if one is configured and it removes anything."""
    if pipeline.relations is None or g.relations <= set(pipeline.relations):
        return g
    return restrict_relations(g, pipeline.relations)


class Coordinator:
    """Runs one query through the stages and assembles its audit record."""

    def __init__(
        self,
        query: str,
        g: KnowledgeGraph,
        pipeline: PipelineConfig,
        backend: BaseBackend,
    ):
        self.query = query
        self.graph = prepare_graph(g, pipeline)
        self.pipeline = pipeline
        self.backend = backend
        self.normalizer = TermNormalizer(pipeline.synonyms)
        self.workspace = Workspace()
        self.timings: Dict[str, float] = {}
        self._executor: Optional[ThreadPoolExecutor] = None
        self._errors: Dict[str, BaseException] = {}
        self._chains_started = 0.0
        self._synthesis_generation: Optional[str] = None

    def _fail(self, key: str, error: BaseException) -> None:
        self._errors[key] = error
        self.workspace.fail(key, str(error))

    # Stages.

    def _on_decomposition(self, ws: Workspace) -> None:
        status, decomposition = ws.get(DECOMPOSITION)
        if status == "failed":
            self._fail(FINAL, self._errors[DECOMPOSITION])
            return
        keys = [chain_key(q.index) for q in decomposition.sub_questions]
        ws.subscribe(keys, self._on_chains)
        self._executor = ThreadPoolExecutor(
            max_workers=self.pipeline.parallelism or len(keys),
            thread_name_prefix="graphmind-chain",
        )
        self._chains_started = time.perf_counter()
        for q in decomposition.sub_questions:
            self._executor.submit(self._run_chain, q)

    def _run_chain(self, q) -> None:
        key = chain_key(q.index)
        t1 = time.perf_counter()
        try:
            chain = run_chain(q, self.graph, self.pipeline.chain, self.backend, pipeline=self.pipeline)
        except Exception as e:
            chain = ReasoningChain(sub_question=q, status="failed", error=repr(e))
        self.timings[key] = time.perf_counter() - t1
        if chain.status == "failed":
            self.workspace.fail(key, chain)
        else:
            self.workspace.put(key, chain)

    def _on_chains(self, ws: Workspace) -> None:
        self.timings["chains"] = time.perf_counter() - self._chains_started
        t1 = time.perf_counter()
        try:
            chains = self.chains()
            answers = [
                SubAnswer(
                    sub_question=c.sub_question,
                    text=self.normalizer(c.answer),
                    evidence=c.evidence,
                )
                for c in chains
                if c.status == "completed"
            ]
            if not answers:
                raise PipelineError(f"All {len(chains)} reasoning chains failed.")
            conflicts = detect_conflicts(answers, self.pipeline.conflict_rules)
            verified, reports = resolve(conflicts, answers, self.query)
        except Exception as e:
            self._fail(CONFLICTS, e)
            self._fail(FINAL, e)
            return
        self.timings["conflicts"] = time.perf_counter() - t1
        ws.subscribe([CONFLICTS], self._on_conflicts)
        ws.put(CONFLICTS, Verification(verified=verified, conflicts=reports))

    def _on_conflicts(self, ws: Workspace) -> None:
        _, verification = ws.get(CONFLICTS)
        t1 = time.perf_counter()
        try:
            if self.pipeline.use_synthesizer:
                synthesis = synthesize(
                    self.query, verification.verified, self.backend, config=self.pipeline
                )
                self._synthesis_generation = synthesis.generation
                final = synthesis.answer
            else:
                final = join_answers(verification.verified)
        except Exception as e:
            self._fail(FINAL, e)
            return
        self.timings["synthesize"] = time.perf_counter() - t1
        ws.put(FINAL, final)

    # Results.

    def chains(self) -> List[ReasoningChain]:
        """Every settled chain, by sub-question index."""
        chains = []
        for key in self.workspace.keys():
            if key.startswith("chain:"):
                _, chain = self.workspace.get(key)
                chains.append(chain)
        return sorted(chains, key=lambda c: c.sub_question.index)

    def audit(self, started_at: datetime) -> AuditRecord:
        ws = self.workspace
        status, decomposition = ws.get(DECOMPOSITION)
        _, verification = ws.get(CONFLICTS)
        final_status, final = ws.get(FINAL)

        chains = self.chains()
        if isinstance(verification, Verification):
            kept = {a.index for a in verification.verified}
            chains = [
                c.model_copy(update={"status": "suppressed"})
                if c.status == "completed" and c.sub_question.index not in kept
                else c
                for c in chains
            ]
            conflicts = verification.conflicts
        else:
            conflicts = []

        return AuditRecord(
            query=self.query,
            config=AuditConfig(pipeline=self.pipeline, graph=self.graph.source),
            decomposition=decomposition if status == "ready" else None,
            chains=chains,
            conflicts=conflicts,
            final_answer=final if final_status == "ready" else None,
            synthesis_generation=self._synthesis_generation,
            timings=dict(sorted(self.timings.items())),
            started_at=started_at,
            finished_at=datetime.now(timezone.utc),
        )

    def run(self) -> Tuple[str, AuditRecord]:
        started_at = datetime.now(timezone.utc)
        t0 = time.perf_counter()
        self.workspace.subscribe([DECOMPOSITION], self._on_decomposition)
        try:
            try:
                decomposition = self._decompose()
            except GraphmindError as e:
                self._fail(DECOMPOSITION, e)
            else:
                self.workspace.put(DECOMPOSITION, decomposition)
            self.workspace.get(FINAL, wait=True)
        finally:
            if self._executor is not None:
                self._executor.shutdown(wait=True)
        self.timings["total"] = time.perf_counter() - t0

        record = self.audit(started_at)
        if record.final_answer is None:
            error = self._errors.get(FINAL)
            log_warning("Pipeline failed: {error}", error=str(error))
            raise PipelineError(f"Pipeline failed: {error}", audit=record) from error
        log_info(
            "Answered with {chains} chains and {conflicts} conflicts",
            chains=len(record.chains),
            conflicts=len(record.conflicts),
        )
        return record.final_answer, record

    def _decompose(self) -> DecompositionResult:
        t1 = time.perf_counter()
        if self.pipeline.use_decomposer:
            result = decompose(
                self.query, self.pipeline.chain.n_q, self.backend, config=self.pipeline
            )
        else:
            result = single_question(self.query)
        self.timings["decompose"] = time.perf_counter() - t1
        return result


@logger
def run_pipeline(
    query: str,
    g: KnowledgeGraph,
    cfg: Union[ChainConfig, PipelineConfig, None],
    backend: BaseBackend,
) -> Tuple[str, AuditRecord]:
    """Answer ``query``: decompose, reason per sub-question in parallel,
    resolve conflicts, synthesize.

    Failed chains are recorded and left out of synthesis. Raises
    ``PipelineError``, carrying the partial audit, when decomposition fails,
    every chain fails, or synthesis fails.
    """
    if isinstance(cfg, ChainConfig):
        cfg = PipelineConfig(chain=cfg)
    return Coordinator(query, g, cfg or PipelineConfig(), backend).run()
