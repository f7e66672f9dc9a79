"""A deterministic backend that replays canned replies.

Replies are keyed by ``(chain id, step index)``, never by prompt content:
each ``generate`` call on a chain consumes that chain's next step.
"""

import json
import threading
from collections import defaultdict
from pathlib import Path
from typing import TYPE_CHECKING, Dict, Iterable, List, Mapping, Sequence, Tuple, Union

from pydantic import BaseModel, Field, ValidationError

from ..exceptions import ScriptError, ScriptExhaustedError
from ..logging import log_info
from ..models import GenerationRequest, GenerationResponse
from ._base import BaseBackend

if TYPE_CHECKING:
    from ..models import AuditRecord
    from ..settings import BackendConfig

BACKEND_NAME = "scripted"


class ScriptEntry(BaseModel):
    chain: str = Field(min_length=1)
    step: int = Field(ge=0)
    content: str


class ScriptedBackend(BaseBackend):
    NAME = BACKEND_NAME

    def __init__(self, entries: Mapping[Tuple[str, int], str]):
        self._entries: Dict[Tuple[str, int], str] = dict(entries)
        self._steps: Dict[str, int] = defaultdict(int)
        self._lock = threading.Lock()
        self.requests: List[GenerationRequest] = []

    @classmethod
    def from_config(cls, config: "BackendConfig") -> "ScriptedBackend":
        return load_script(config.script)

    @classmethod
    def from_chains(cls, chains: Mapping[str, Sequence[str]]) -> "ScriptedBackend":
        """Build a script from ``{chain id: [reply for step 0, step 1, ...]}``."""
        return cls(
            {
                (chain, step): content
                for chain, replies in chains.items()
                for step, content in enumerate(replies)
            }
        )

    @property
    def entries(self) -> Dict[Tuple[str, int], str]:
        return dict(self._entries)

    def steps_used(self, chain: str) -> int:
        with self._lock:
            return self._steps[chain]

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        with self._lock:
            step = self._steps[request.chain_id]
            self._steps[request.chain_id] = step + 1
            self.requests.append(request)
        try:
            content = self._entries[(request.chain_id, step)]
        except KeyError:
            raise ScriptExhaustedError(request.chain_id, step) from None
        return GenerationResponse(content=content, finish_reason="stop")

    def dump(self, path: Union[str, Path]) -> None:
        """Write the script in the JSON-lines form ``load_script`` reads."""
        with open(path, "w", encoding="utf-8") as f:
            for (chain, step), content in sorted(self._entries.items()):
                entry = ScriptEntry(chain=chain, step=step, content=content)
                f.write(entry.model_dump_json() + "\n")


def _parse_entries(lines: Iterable[str]) -> Dict[Tuple[str, int], str]:
    entries: Dict[Tuple[str, int], str] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            entry = ScriptEntry.model_validate(json.loads(line))
        except json.JSONDecodeError as e:
            raise ScriptError(f"invalid JSON: {e.msg}", line=lineno) from e
        except ValidationError as e:
            raise ScriptError(f"invalid entry: {e}", line=lineno) from e
        key = (entry.chain, entry.step)
        if key in entries:
            raise ScriptError(
                f"duplicate entry for chain {entry.chain!r}, step {entry.step}",
                line=lineno,
            )
        entries[key] = entry.content
    return entries


def load_script(path: Union[str, Path]) -> ScriptedBackend:
    """Load a JSON-lines script of ``{"chain", "step", "content"}`` objects."""
    try:
        with open(path, encoding="utf-8") as f:
            entries = _parse_entries(f)
    except OSError as e:
        raise ScriptError(f"cannot read script {str(path)!r}: {e}") from e
    log_info("Loaded script with {count} entries", count=len(entries))
    return ScriptedBackend(entries)


def script_from_audit(record: "AuditRecord") -> ScriptedBackend:
    """A backend that replays every generation recorded in ``record``."""
    from ..models import chain_id_for

    root: List[str] = []
    if record.decomposition is not None and record.decomposition.raw is not None:
        root.append(record.decomposition.raw)
    if record.synthesis_generation is not None:
        root.append(record.synthesis_generation)

    chains: Dict[str, List[str]] = {"root": root}
    for chain in record.chains:
        replies = [turn.generation for turn in chain.turns]
        if chain.answer_generation is not None:
            replies.append(chain.answer_generation)
        chains[chain_id_for(chain.sub_question.index)] = replies
    return ScriptedBackend.from_chains(chains)
