"""Cross-chain verification and the final answer.

Sub-answers whose evidence contradicts each other under a relation-pair rule
(by default: something both ``treats`` and ``causes`` the same thing) are
ranked by their support score; the weaker side is suppressed.
"""

import re
from collections import defaultdict
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from .backends import BaseBackend
from .decomposer import ROOT_CHAIN
from .exceptions import BackendError, InvalidInputError, StageError
from .logging import log_info, logger
from .models import ConflictReport, GenerationRequest, GMBaseModel, Message, SubAnswer, SupportScore
from .prompts import SYNTHESIZE, fit_items, load_template
from .protocol import strip_final_marker
from .settings import PipelineConfig
from .utils import normalize_key

Rule = Tuple[str, str]


class TermNormalizer:
    """Case-insensitive whole-word replacement from a lookup table.

    Used for canonical synonyms and dosage units; an empty table is the identity.
    """

    def __init__(self, table: Optional[Mapping[str, str]] = None):
        self.table = {normalize_key(k): v for k, v in (table or {}).items() if k.strip()}
        if self.table:
            terms = sorted(self.table, key=len, reverse=True)
            self._pattern = re.compile(
                r"(?<!\w)(" + "|".join(re.escape(t).replace(r"\ ", r"\s+") for t in terms) + r")(?!\w)",
                re.IGNORECASE,
            )
        else:
            self._pattern = None

    def __call__(self, text: str) -> str:
        if self._pattern is None:
            return text
        return self._pattern.sub(lambda m: self.table[normalize_key(m.group(1))], text)

    def __repr__(self) -> str:
        return f"<TermNormalizer terms={len(self.table)}>"


def _supported(answer: SubAnswer) -> Dict[Tuple[str, str], Set[str]]:
    """``(head, tail) -> relations`` over every step of the answer's evidence."""
    supported: Dict[Tuple[str, str], Set[str]] = defaultdict(set)
    for chain in answer.evidence.chains:
        for step in chain.steps:
            supported[(step.head, step.tail)].add(step.relation)
    return supported


def _clashes(
    left: Dict[Tuple[str, str], Set[str]],
    right: Dict[Tuple[str, str], Set[str]],
    rule: Rule,
) -> List[Tuple[str, str]]:
    first, second = rule
    return sorted(
        pair
        for pair in left.keys() & right.keys()
        if (first in left[pair] and second in right[pair])
        or (second in left[pair] and first in right[pair])
    )


@logger
def detect_conflicts(answers: Sequence[SubAnswer], rules: Iterable[Rule]) -> List[ConflictReport]:
    """Flag answer pairs, and single answers, whose evidence holds ``X r1 S``
    and ``X r2 S`` for a rule ``(r1, r2)``.

    One report per pair and rule. Reports come out ordered by pair, so the
    result does not depend on the order of ``answers``. ``resolution`` is
    provisional (the lower index) until ``resolve``.
    """
    rules = list(rules)
    if not rules:
        raise InvalidInputError("at least one conflict rule is required")
    ordered = sorted(answers, key=lambda a: a.index)
    supported = {a.index: _supported(a) for a in ordered}

    reports = []
    for x, a in enumerate(ordered):
        for b in ordered[x:]:
            for rule in rules:
                clashes = _clashes(supported[a.index], supported[b.index], rule)
                if not clashes:
                    continue
                listed = ", ".join(f"{head} -> {tail}" for head, tail in clashes)
                where = (
                    f"answer {a.index}"
                    if a.index == b.index
                    else f"answers {a.index} and {b.index}"
                )
                reports.append(
                    ConflictReport(
                        pair=(a.index, b.index),
                        rule=f"{rule[0]}/{rule[1]}",
                        description=f"{where} both {rule[0]} and {rule[1]}: {listed}",
                        resolution=a.index,
                    )
                )
    if reports:
        log_info("Found {count} conflicts", count=len(reports))
    return reports


def _mentions_entity(query_key: str, entity: str) -> bool:
    key = normalize_key(entity)
    return re.search(r"(?<!\w)" + re.escape(key) + r"(?!\w)", query_key) is not None


def support_score(a: SubAnswer, query: str) -> SupportScore:
    """``(distinct chains, distinct relations, evidence entities named in the query)``."""
    chains = {tuple(chain.steps) for chain in a.evidence.chains}
    relations = {step.relation for chain in chains for step in chain}
    entities = {e for origin in a.evidence.origins for e in origin.entities}
    entities |= {e for chain in chains for step in chain for e in (step.head, step.tail)}
    query_key = normalize_key(query)
    return SupportScore(
        chain_count=len(chains),
        relation_breadth=len(relations),
        query_overlap=sum(1 for e in entities if _mentions_entity(query_key, e)),
    )


def resolve(
    conflicts: Sequence[ConflictReport], answers: Sequence[SubAnswer], query: str
) -> Tuple[List[SubAnswer], List[ConflictReport]]:
    """Keep the better-supported side of every conflict.

    Scores compare lexicographically; an exact tie keeps the lower index.
    Returns the verified answers, in their input order, and the finalized reports.
    """
    scores = {a.index: support_score(a, query).as_tuple() for a in answers}

    def rank(index: int) -> Tuple[Tuple[int, int, int], int]:
        return scores.get(index, (0, 0, 0)), -index

    suppressed: Set[int] = set()
    finalized = []
    for report in conflicts:
        i, j = report.pair
        kept = max((i, j), key=rank)
        if i != j:
            suppressed.add(j if kept == i else i)
        finalized.append(report.model_copy(update={"resolution": kept}))

    verified = [a for a in answers if a.index not in suppressed]
    return verified, finalized


def _qa_pairs(verified: Sequence[SubAnswer]) -> str:
    return "\n\n".join(
        f"{a.index + 1}. {a.sub_question.text}\nAnswer: {a.text}" for a in verified
    )


def join_answers(verified: Sequence[SubAnswer]) -> str:
    """The final answer without a synthesis call: the answers in index order."""
    if not verified:
        raise InvalidInputError("no verified answers to join")
    return "\n\n".join(a.text for a in sorted(verified, key=lambda a: a.index))


class Synthesis(GMBaseModel):
    answer: str
    # The reply before the end marker was stripped.
    generation: str


@logger
def synthesize(
    query: str,
    verified: Sequence[SubAnswer],
    backend: BaseBackend,
    *,
    config: Optional[PipelineConfig] = None,
) -> Synthesis:
    """Generate the final reply from the verified answers and their evidence.

    Evidence is trimmed oldest-first to fit the input budget.
    """
    verified = [v for v in verified if not v.suppressed]
    if not verified:
        raise InvalidInputError("no verified answers to synthesize from")
    config = config or PipelineConfig()
    template = load_template(SYNTHESIZE, config.prompts_dir)

    qa_pairs = _qa_pairs(verified)
    facts = list(dict.fromkeys(f for a in verified for f in a.evidence.facts))
    room = config.max_input_chars - len(template.render(query=query, qa_pairs=qa_pairs, evidence=""))
    evidence = fit_items(facts, max(room, 0))
    if len(evidence) < len(facts):
        log_info("Trimmed {dropped} evidence lines to fit the budget", dropped=len(facts) - len(evidence))

    request = GenerationRequest(
        messages=[
            Message(
                role="user",
                content=template.render(query=query, qa_pairs=qa_pairs, evidence="\n".join(evidence)),
            )
        ],
        sampling=config.sampling.synthesize,
        max_tokens=config.max_tokens,
        chain_id=ROOT_CHAIN,
        stage="synthesize",
    )
    try:
        generation = backend.generate(request).content or ""
    except BackendError as e:
        raise StageError("synthesize", e) from e
    answer = strip_final_marker(generation)
    if not answer:
        raise StageError("synthesize", BackendError("the model returned an empty reply"))
    return Synthesis(answer=answer, generation=generation)


def synthesize_final(
    query: str,
    verified: Sequence[SubAnswer],
    backend: BaseBackend,
    *,
    config: Optional[PipelineConfig] = None,
) -> str:
    """The final answer text; see ``synthesize``."""
    return synthesize(query, verified, backend, config=config).answer
