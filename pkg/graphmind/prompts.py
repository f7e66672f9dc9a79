"""Prompt templates and the context budget.

Templates are plain text files with ``{placeholder}`` fields. The packaged
ones live in ``graphmind/prompts/``; a ``prompts_dir`` overrides them by name.
Token counts are approximated as characters divided by ``chars_per_token``.
"""

import string
from functools import lru_cache
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .exceptions import ConfigError
from .models import Message

PACKAGE_PROMPTS_DIR = Path(__file__).parent / "prompts"

DECOMPOSE = "decompose"
REASON = "reason"
ANSWER = "answer"
SYNTHESIZE = "synthesize"

REQUIRED_FIELDS: Dict[str, frozenset] = {
    DECOMPOSE: frozenset({"query", "n_q"}),
    REASON: frozenset({"sub_question", "evidence_so_far"}),
    ANSWER: frozenset({"sub_question", "evidence"}),
    SYNTHESIZE: frozenset({"query", "qa_pairs", "evidence"}),
}


class PromptTemplate:
    def __init__(self, name: str, text: str):
        self.name = name
        self.text = text
        self.fields = frozenset(
            field for _, field, _, _ in string.Formatter().parse(text) if field
        )
        unknown = self.fields - REQUIRED_FIELDS.get(name, self.fields)
        if unknown:
            raise ConfigError(
                f"Template {name!r} uses unknown placeholders: {sorted(unknown)}"
            )

    def render(self, **values: object) -> str:
        return self.text.format_map(values)

    def __repr__(self) -> str:
        return f"<PromptTemplate name={self.name!r}>"


@lru_cache(maxsize=None)
def load_template(name: str, prompts_dir: Optional[Path] = None) -> PromptTemplate:
    """Load ``{name}.tmpl``, preferring ``prompts_dir`` over the packaged copy."""
    for directory in (prompts_dir, PACKAGE_PROMPTS_DIR):
        if directory is None:
            continue
        path = Path(directory) / f"{name}.tmpl"
        if path.is_file():
            return PromptTemplate(name, path.read_text(encoding="utf-8"))
    raise ConfigError(f"No prompt template named {name!r}.")


def prompt_chars(messages: Sequence[Message]) -> int:
    return sum(len(m.content) for m in messages)


def fit_items(items: Sequence[str], budget: int, separator: str = "\n") -> List[str]:
    """The newest suffix of ``items`` whose joined length fits in ``budget`` chars."""
    kept: List[str] = []
    used = 0
    for item in reversed(items):
        cost = len(item) + (len(separator) if kept else 0)
        if used + cost > budget:
            break
        kept.append(item)
        used += cost
    kept.reverse()
    return kept


def fit_messages(messages: Sequence[Message], budget: int) -> List[Message]:
    """Drop the oldest exchanges after the opening message until the prompt
    fits in ``budget`` chars.

    Exchanges are (assistant, user) pairs. The opening message and the final
    exchange are always kept.
    """
    head, rest = list(messages[:1]), list(messages[1:])
    while len(rest) > 2 and prompt_chars(head + rest) > budget:
        rest = rest[2:]
    return head + rest
