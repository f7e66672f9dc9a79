import re
from typing import List, Optional, Tuple

from .backends import BaseBackend
from .exceptions import BackendError, DecompositionParseError, InvalidInputError, StageError
from .logging import log_info, logger
from .models import DecompositionResult, GenerationRequest, Message, SubQuestion
from .prompts import DECOMPOSE, load_template
from .settings import PipelineConfig

NO_DECOMPOSITION = "NO_DECOMPOSITION"
ROOT_CHAIN = "root"

_NUMBERED_LINE = re.compile(
    r"^\s*(\d+)[.)]\s+(.+?)\s*(?:\[entities:\s*(.*?)\])?\s*$", re.IGNORECASE
)


def parse_decomposition(text: str) -> List[Tuple[str, List[str]]]:
    """Parse ``N. question [entities: a; b]`` lines, in order.

    The entity bracket is optional; lines that are not numbered are skipped.
    """
    parsed = []
    for line in text.splitlines():
        match = _NUMBERED_LINE.match(line)
        if match is None:
            continue
        question = match.group(2).strip()
        entities = [e.strip() for e in (match.group(3) or "").split(";") if e.strip()]
        parsed.append((question, entities))
    if not parsed:
        raise DecompositionParseError("no numbered sub-question found")
    return parsed


def single_question(query: str, raw: Optional[str] = None) -> DecompositionResult:
    """The query itself as the only sub-question."""
    return DecompositionResult(
        sub_questions=[SubQuestion(index=0, text=query.strip())],
        decomposed=False,
        raw=raw,
    )


@logger
def decompose(
    query: str,
    n_q: int,
    backend: BaseBackend,
    *,
    config: Optional[PipelineConfig] = None,
) -> DecompositionResult:
    """Split ``query`` into at most ``n_q`` entity-grounded sub-questions.

    Any model output that is not a numbered list, including an explicit
    ``NO_DECOMPOSITION`` verdict, falls back to the query as one sub-question.
    """
    if not query.strip():
        raise InvalidInputError("query must be nonempty")
    if n_q < 1:
        raise InvalidInputError(f"n_q must be positive, got {n_q}")
    config = config or PipelineConfig()

    prompt = load_template(DECOMPOSE, config.prompts_dir).render(query=query, n_q=n_q)
    request = GenerationRequest(
        messages=[Message(role="user", content=prompt)],
        sampling=config.sampling.decompose,
        max_tokens=config.max_tokens,
        chain_id=ROOT_CHAIN,
        stage="decompose",
    )
    try:
        content = backend.generate(request).content or ""
    except BackendError as e:
        raise StageError("decompose", e) from e

    if NO_DECOMPOSITION in content:
        log_info("Model declined to decompose the query")
        return single_question(query, raw=content)
    try:
        parsed = parse_decomposition(content)
    except DecompositionParseError:
        log_info("Decomposition output unparseable, using the query as is")
        return single_question(query, raw=content)

    sub_questions = [
        SubQuestion(index=i, text=text, seed_entities=entities)
        for i, (text, entities) in enumerate(parsed[:n_q])
    ]
    log_info("Decomposed query into {count} sub-questions", count=len(sub_questions))
    return DecompositionResult(sub_questions=sub_questions, decomposed=True, raw=content)
