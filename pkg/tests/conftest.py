import os
import sys
from pathlib import Path
from typing import Iterable, Sequence, Tuple

import pytest

# Add the project root to the Python path.
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from graphmind import KnowledgeGraph, load_graph, load_script
from graphmind.backends import BaseBackend
from graphmind.exceptions import BackendError
from graphmind.models import (
    Chain,
    EvidenceChainSet,
    EvidenceOrigin,
    GenerationRequest,
    GenerationResponse,
    SubAnswer,
    SubQuestion,
    Triple,
)
from graphmind.retriever import verbalize

FIXTURES = Path(__file__).parent / "fixtures"
FATIGUE_QUERY = "Why do I keep feeling fatigued even after sleeping well?"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def medical_graph() -> KnowledgeGraph:
    """The small medical graph behind the fatigue example."""
    return load_graph(FIXTURES / "medical.tsv")


@pytest.fixture
def chain_graph() -> KnowledgeGraph:
    """A -r-> B -s-> C."""
    return load_graph([("A", "r", "B"), ("B", "s", "C")])


@pytest.fixture
def fatigue_backend():
    """A scripted backend for the full fatigue example run."""
    return load_script(FIXTURES / "fatigue_script.jsonl")


def _answer(
    index: int,
    chains: Iterable[Sequence[Tuple[str, str, str]]],
    text: str = "an answer",
) -> SubAnswer:
    origins = []
    facts = []
    for steps in chains:
        chain = Chain(steps=[Triple(*s) for s in steps])
        chain_facts = ["; ".join(verbalize(t) for t in chain.steps)]
        facts += [f for f in chain_facts if f not in facts]
        origins.append(
            EvidenceOrigin(
                mode="anchor" if chain.length == 1 else "bridge",
                mentions=[chain.source],
                entities=[chain.source],
                chain=chain,
                facts=chain_facts,
            )
        )
    return SubAnswer(
        sub_question=SubQuestion(index=index, text=f"question {index}"),
        text=text,
        evidence=EvidenceChainSet(facts=facts, origins=origins),
    )


@pytest.fixture
def make_answer():
    """Build a SubAnswer from lists of (head, relation, tail) chain steps."""
    return _answer


class FailingBackend(BaseBackend):
    """Fails every generation on the listed chains; delegates the rest."""

    NAME = "failing"

    def __init__(self, inner: BaseBackend | None = None, chains: Sequence[str] = ("root",)):
        self.inner = inner
        self.chains = set(chains)

    @classmethod
    def from_config(cls, config):
        raise NotImplementedError

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        if self.inner is None or request.chain_id in self.chains:
            raise BackendError(f"backend down for {request.chain_id}", status=503)
        return self.inner.generate(request)


@pytest.fixture
def failing_backend():
    """``failing_backend(inner, chains)`` fails generations on ``chains``."""
    return FailingBackend
