"""The per-sub-question reasoning loop.

Each turn the model either finishes or asks for graph evidence with a search
block; the engine answers in-band with a result block. The loop is bounded by
``max_turns`` generations and ``n_r`` graph searches.
"""

from typing import List, Optional, Sequence, Tuple

from .backends import BaseBackend
from .exceptions import BackendError, InvalidInputError, MalformedBlockError
from .graph import KnowledgeGraph, find_chains, neighbors
from .linker import link
from .logging import log_info, log_warning, logger
from .models import (
    Chain,
    ControlAction,
    ControlSignal,
    EvidenceChainSet,
    EvidenceOrigin,
    GenerationRequest,
    MalformedAction,
    Message,
    ReasoningChain,
    SearchBlock,
    SearchedAction,
    SubQuestion,
    TerminatedAction,
    Triple,
    TurnRecord,
    chain_id_for,
)
from .prompts import ANSWER, REASON, fit_items, fit_messages, load_template, prompt_chars
from .protocol import (
    MALFORMED_QUERY,
    MAX_LIMIT_REACHED,
    NO_ENTITY_MATCH,
    NO_PATH_FOUND,
    detect_termination,
    extract_search_block,
    render_result_block,
    strip_final_marker,
)
from .settings import ChainConfig, PipelineConfig

NO_EVIDENCE = "(none yet)"


def verbalize(t: Triple) -> str:
    """``(Diabetes, has_symptom, Fatigue)`` reads ``Diabetes has symptom Fatigue``."""
    return f"{t.head} {t.relation.replace('_', ' ')} {t.tail}"


def verbalize_chain(chain: Chain) -> List[str]:
    """The joined hop facts of a chain plus a line naming its endpoints."""
    return [
        "; ".join(verbalize(step) for step in chain.steps),
        f"chain {chain.source} -> {chain.target} ({chain.length} hops)",
    ]


def search(
    block: SearchBlock, g: KnowledgeGraph, cfg: ChainConfig
) -> Tuple[List[str], List[EvidenceOrigin]]:
    """Run one graph search; failures come back as in-band facts with no origins."""
    linked = []
    for mention in block.mentions:
        result = link(mention, g, cfg.tau)
        if not result.matched:
            log_info("No entity matches {mention!r}", mention=mention)
            return [NO_ENTITY_MATCH], []
        linked.append(result.entity)

    if len(linked) == 1:
        entity = linked[0]
        origins = [
            EvidenceOrigin(
                mode="anchor",
                mentions=block.mentions,
                entities=[entity],
                chain=Chain(steps=[t]),
                facts=[verbalize(t)],
            )
            for t in neighbors(g, entity, cfg.k)
        ]
    else:
        e1, e2 = linked
        chains = [] if e1 == e2 else find_chains(g, e1, e2, cfg.h, cfg.n)
        origins = [
            EvidenceOrigin(
                mode="bridge",
                mentions=block.mentions,
                entities=[e1, e2],
                chain=chain,
                facts=verbalize_chain(chain),
            )
            for chain in chains
        ]

    facts = [fact for origin in origins for fact in origin.facts]
    log_info(
        "Searched the graph for {mentions} and found {count} facts",
        mentions=block.mentions,
        count=len(facts),
    )
    return facts or [NO_PATH_FOUND], origins


def kg_search(block: SearchBlock, g: KnowledgeGraph, cfg: ChainConfig) -> List[str]:
    """Anchor (one mention) or bridge (two mentions) retrieval as verbalized facts."""
    return search(block, g, cfg)[0]


def merge_evidence(
    existing: EvidenceChainSet, incoming: Sequence[EvidenceOrigin]
) -> EvidenceChainSet:
    """Union the facts in first-seen order; keep an origin only if it adds a fact."""
    facts = list(existing.facts)
    seen = set(facts)
    origins = list(existing.origins)
    for origin in incoming:
        new = [f for f in dict.fromkeys(origin.facts) if f not in seen]
        if not new:
            continue
        facts.extend(new)
        seen.update(new)
        origins.append(origin)
    return EvidenceChainSet(facts=facts, origins=origins)


class _ChainRun:
    """Mutable state of one chain; owned by a single thread."""

    def __init__(
        self,
        q: SubQuestion,
        g: KnowledgeGraph,
        cfg: ChainConfig,
        backend: BaseBackend,
        pipeline: PipelineConfig,
    ):
        self.q = q
        self.g = g
        self.cfg = cfg
        self.backend = backend
        self.pipeline = pipeline
        self.chain_id = chain_id_for(q.index)
        self.budget = pipeline.max_input_chars
        self.reason_template = load_template(REASON, pipeline.prompts_dir)
        self.answer_template = load_template(ANSWER, pipeline.prompts_dir)
        self.turns: List[TurnRecord] = []
        self.history: List[Message] = []
        self.evidence = EvidenceChainSet()
        self.retrievals = 0
        self.answer_generation: Optional[str] = None

    def _header(self, facts: Sequence[str]) -> Message:
        return Message(
            role="user",
            content=self.reason_template.render(
                sub_question=self.q.text,
                evidence_so_far="\n".join(facts) or NO_EVIDENCE,
            ),
        )

    def context(self) -> List[Message]:
        """The turn prompt, trimmed to the input budget.

        Oldest exchanges go first, then the oldest evidence lines.
        """
        messages = fit_messages([self._header(self.evidence.facts)] + self.history, self.budget)
        if prompt_chars(messages) <= self.budget:
            return messages
        rest = messages[1:]
        fixed = prompt_chars([self._header([])] + rest)
        if fixed > self.budget:
            rest = []
            fixed = prompt_chars([self._header([])])
        kept = fit_items(self.evidence.facts, max(self.budget - fixed, 0))
        return [self._header(kept)] + rest

    def _generate(self, messages: List[Message], stage: str, sampling) -> str:
        request = GenerationRequest(
            messages=messages,
            sampling=sampling,
            max_tokens=self.pipeline.max_tokens,
            chain_id=self.chain_id,
            stage=stage,
        )
        return self.backend.generate(request).content or ""

    def _record(self, t: int, generation: str, action, result: Optional[str] = None) -> None:
        self.turns.append(
            TurnRecord(turn_index=t, generation=generation, action=action, injected_result=result)
        )
        if result is not None:
            self.history += [
                Message(role="assistant", content=generation),
                Message(role="user", content=result),
            ]

    def step(self, t: int) -> bool:
        """Run turn ``t``; False once the model has finished."""
        generation = self._generate(self.context(), "reason", self.pipeline.sampling.retrieval)
        if detect_termination(generation):
            self._record(t, generation, TerminatedAction())
            return False

        try:
            block = extract_search_block(generation)
        except MalformedBlockError as e:
            signal = ControlSignal(kind=MALFORMED_QUERY)
            self._record(t, generation, MalformedAction(error=str(e)), render_result_block(signal))
            return True

        if self.retrievals >= self.cfg.n_r:
            signal = ControlSignal(kind=MAX_LIMIT_REACHED)
            log_info("Retrieval budget of {n_r} spent on {chain}", n_r=self.cfg.n_r, chain=self.chain_id)
            self._record(t, generation, ControlAction(signal=signal, block=block), render_result_block(signal))
            return True

        facts, origins = search(block, self.g, self.cfg)
        self.retrievals += 1
        self.evidence = merge_evidence(
            self.evidence, [o.model_copy(update={"turn_index": t}) for o in origins]
        )
        if facts == [NO_ENTITY_MATCH]:
            signal = ControlSignal(kind=NO_ENTITY_MATCH)
            self._record(t, generation, ControlAction(signal=signal, block=block), render_result_block(signal))
        else:
            self._record(t, generation, SearchedAction(block=block), render_result_block(facts))
        return True

    def answer(self) -> str:
        empty = self.answer_template.render(sub_question=self.q.text, evidence=NO_EVIDENCE)
        facts = fit_items(self.evidence.facts, max(self.budget - len(empty), 0))
        prompt = self.answer_template.render(
            sub_question=self.q.text, evidence="\n".join(facts) or NO_EVIDENCE
        )
        generation = self._generate(
            [Message(role="user", content=prompt)], "answer", self.pipeline.sampling.synthesize
        )
        self.answer_generation = generation
        return strip_final_marker(generation)

    def result(self, answer: Optional[str] = None, error: Optional[str] = None) -> ReasoningChain:
        return ReasoningChain(
            sub_question=self.q,
            turns=self.turns,
            retrieval_count=self.retrievals,
            evidence=self.evidence,
            answer=answer,
            answer_generation=self.answer_generation,
            status="failed" if error else "completed",
            error=error,
        )


@logger
def run_chain(
    q: SubQuestion,
    g: KnowledgeGraph,
    cfg: ChainConfig,
    backend: BaseBackend,
    *,
    pipeline: Optional[PipelineConfig] = None,
) -> ReasoningChain:
    """Alternate generation and graph retrieval for one sub-question, then
    generate its answer from the gathered evidence.

    A backend failure marks the chain failed and keeps the partial trace.
    """
    if not q.text.strip():
        raise InvalidInputError("sub-question must be nonempty")
    pipeline = pipeline or PipelineConfig(chain=cfg)
    run = _ChainRun(q, g, cfg, backend, pipeline)
    try:
        for t in range(cfg.max_turns):
            if not run.step(t):
                break
        answer = run.answer()
    except BackendError as e:
        log_warning("Chain {chain} failed: {error}", chain=run.chain_id, error=str(e))
        return run.result(error=str(e))
    if not answer:
        log_warning("Chain {chain} produced an empty answer", chain=run.chain_id)
        return run.result(error="empty answer")
    return run.result(answer=answer)
