"""The control-token protocol spoken between model output and the retrieval engine.

A model asks for graph evidence with ``<|KG_QUERY_BEGIN|>mention[|mention]<|KG_QUERY_END|>``
and receives ``<|KG_RESULT_BEGIN|>`` + one fact per line + ``<|KG_RESULT_END|>``.
Token strings are bit-exact.
"""

import re
from typing import List, Optional, Sequence, Union

from pydantic import ValidationError

from .exceptions import MalformedBlockError
from .models import ControlSignal, SearchBlock

QUERY_BEGIN = "<|KG_QUERY_BEGIN|>"
QUERY_END = "<|KG_QUERY_END|>"
RESULT_BEGIN = "<|KG_RESULT_BEGIN|>"
RESULT_END = "<|KG_RESULT_END|>"
FINAL_ANSWER = "<|FINAL_ANSWER|>"
NO_ENTITY_MATCH = "no_entity_match"
MAX_LIMIT_REACHED = "max_limit_reached"
NO_PATH_FOUND = "no path found"
MALFORMED_QUERY = "malformed_query"
MENTION_SEPARATOR = "|"

DELIMITERS = (QUERY_BEGIN, QUERY_END, RESULT_BEGIN, RESULT_END, FINAL_ANSWER)

# A closed block whose payload holds no further opening delimiter.
_BLOCK = re.compile(
    re.escape(QUERY_BEGIN)
    + r"((?:(?!"
    + re.escape(QUERY_BEGIN)
    + r").)*?)"
    + re.escape(QUERY_END),
    re.DOTALL,
)


def parse_mentions(payload: str) -> List[str]:
    """Split a block payload into its 1 or 2 trimmed mentions."""
    mentions = [m.strip() for m in payload.split(MENTION_SEPARATOR)]
    if not 1 <= len(mentions) <= 2:
        raise MalformedBlockError(f"expected 1 or 2 mentions, got {len(mentions)}")
    if not all(mentions):
        raise MalformedBlockError(f"empty mention in {payload!r}")
    return mentions


def extract_search_block(generation: str) -> Optional[SearchBlock]:
    """The first well-formed search block in ``generation``, or ``None`` if
    the text opens none.

    Raises ``MalformedBlockError`` when a block is opened but no well-formed
    one is found.
    """
    if QUERY_BEGIN not in generation:
        return None
    error: Optional[MalformedBlockError] = None
    for match in _BLOCK.finditer(generation):
        payload = match.group(1)
        try:
            return SearchBlock(mentions=parse_mentions(payload), raw=payload)
        except MalformedBlockError as e:
            error = error or e
    if error is not None:
        raise error
    raise MalformedBlockError(f"{QUERY_BEGIN} without a matching {QUERY_END}")


def render_search_block(mentions: Sequence[str]) -> str:
    """Render mentions as a search block that ``extract_search_block`` reads back."""
    mentions = [m.strip() for m in mentions]
    for m in mentions:
        if MENTION_SEPARATOR in m or any(d in m for d in DELIMITERS):
            raise MalformedBlockError(f"mention {m!r} contains a reserved token")
    try:
        SearchBlock(mentions=mentions)
    except ValidationError as e:
        raise MalformedBlockError(str(e)) from e
    return QUERY_BEGIN + MENTION_SEPARATOR.join(mentions) + QUERY_END


def _clean_fact(fact: str) -> str:
    for token in DELIMITERS:
        fact = fact.replace(token, "")
    return " ".join(fact.split())


def render_result_block(facts: Union[Sequence[str], ControlSignal]) -> str:
    """Render facts, one per line, or a control signal as its token name.

    An empty fact list renders the ``no path found`` sentinel.
    """
    if isinstance(facts, ControlSignal):
        lines = [facts.kind]
    else:
        lines = [cleaned for cleaned in map(_clean_fact, facts) if cleaned]
        if not lines:
            lines = [NO_PATH_FOUND]
    return RESULT_BEGIN + "\n" + "\n".join(lines) + "\n" + RESULT_END


def detect_termination(generation: str) -> bool:
    """True when the model is done: it emitted the end marker or asked for nothing."""
    return FINAL_ANSWER in generation or QUERY_BEGIN not in generation


def strip_final_marker(text: str) -> str:
    """The text after the last end marker, or all of it when there is none."""
    if FINAL_ANSWER in text:
        text = text.rsplit(FINAL_ANSWER, 1)[1]
    return text.strip()
