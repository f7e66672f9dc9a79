from datetime import datetime
from typing import Annotated, Any, Dict, List, Literal, NamedTuple, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .settings import GraphSource, PipelineConfig, SamplingParams

MESSAGE_ROLE = Literal["system", "user", "assistant"]
CONTROL_KIND = Literal["terminate", "no_entity_match", "max_limit_reached", "malformed_query"]
CHAIN_STATUS = Literal["completed", "failed", "suppressed"]
EVIDENCE_MODE = Literal["anchor", "bridge"]


class GMBaseModel(BaseModel):
    """The base graphmind model class. Records are immutable once built."""

    model_config = ConfigDict(frozen=True)

    def __str__(self):
        return f"<{self.__class__.__name__} {self.model_dump_json()}>"

    def __repr__(self):
        return str(self)


# Generation.


class Message(GMBaseModel):
    """A message sent to a generation backend."""

    role: MESSAGE_ROLE
    content: str

    def __str__(self):
        return f"<Message role={self.role} content={self.content!r}>"


class GenerationRequest(GMBaseModel):
    messages: List[Message] = Field(min_length=1)
    sampling: SamplingParams = Field(default_factory=SamplingParams)
    max_tokens: int = Field(2_048, ge=1)
    # Routing metadata, never sent over the wire.
    chain_id: str = "root"
    stage: str = "reason"


class GenerationResponse(GMBaseModel):
    content: Optional[str] = None
    finish_reason: str = "stop"

    @model_validator(mode="after")
    def content_when_finished(self) -> "GenerationResponse":
        if self.finish_reason in ("stop", "length") and self.content is None:
            raise ValueError(f"content is required when finish_reason={self.finish_reason!r}")
        return self


# Graph.


class Triple(NamedTuple):
    """One fact: ``head --relation--> tail``. Entity ids are the canonical strings."""

    head: str
    relation: str
    tail: str


class Chain(GMBaseModel):
    """A directed simple path through the graph."""

    steps: List[Triple] = Field(min_length=1)

    @field_validator("steps")
    @classmethod
    def connected_and_simple(cls, steps: List[Triple]) -> List[Triple]:
        for prev, nxt in zip(steps, steps[1:]):
            if prev.tail != nxt.head:
                raise ValueError(f"steps do not connect: {prev} -> {nxt}")
        entities = [steps[0].head] + [s.tail for s in steps]
        if len(set(entities)) != len(entities):
            raise ValueError("chain revisits an entity")
        return steps

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def source(self) -> str:
        return self.steps[0].head

    @property
    def target(self) -> str:
        return self.steps[-1].tail


class GraphStats(GMBaseModel):
    entity_count: int
    triple_count: int
    relation_count: int
    # total degree (in + out) -> number of entities with that degree
    degree_histogram: Dict[int, int] = Field(default_factory=dict)


# Control protocol.


class SearchBlock(GMBaseModel):
    """A retrieval target: one mention (anchor) or two (bridge)."""

    mentions: List[str] = Field(min_length=1, max_length=2)
    raw: str = ""

    @field_validator("mentions")
    @classmethod
    def mentions_not_blank(cls, mentions: List[str]) -> List[str]:
        if any(not m.strip() for m in mentions):
            raise ValueError("mentions must be nonempty")
        return mentions


class ControlSignal(GMBaseModel):
    kind: CONTROL_KIND


class SearchedAction(GMBaseModel):
    kind: Literal["searched"] = "searched"
    block: SearchBlock


class ControlAction(GMBaseModel):
    kind: Literal["control"] = "control"
    signal: ControlSignal
    # The block the model asked for, if any, when the signal replaced the search.
    block: Optional[SearchBlock] = None


class MalformedAction(GMBaseModel):
    kind: Literal["malformed"] = "malformed"
    error: str


class TerminatedAction(GMBaseModel):
    kind: Literal["terminated"] = "terminated"


TurnAction = Annotated[
    Union[SearchedAction, ControlAction, MalformedAction, TerminatedAction],
    Field(discriminator="kind"),
]


# Decomposition.


class SubQuestion(GMBaseModel):
    index: int = Field(ge=0)
    text: str = Field(min_length=1)
    seed_entities: List[str] = Field(default_factory=list)


class DecompositionResult(GMBaseModel):
    sub_questions: List[SubQuestion] = Field(min_length=1)
    decomposed: bool
    # The model output the sub-questions were parsed from, kept for replay.
    raw: Optional[str] = None

    @field_validator("sub_questions")
    @classmethod
    def unique_indexes(cls, subs: List[SubQuestion]) -> List[SubQuestion]:
        if len({s.index for s in subs}) != len(subs):
            raise ValueError("sub-question indexes must be unique")
        return subs


# Retrieval.


class EvidenceOrigin(GMBaseModel):
    """Where a group of facts came from."""

    mode: EVIDENCE_MODE
    mentions: List[str]
    entities: List[str]
    chain: Chain
    facts: List[str]
    turn_index: Optional[int] = None


class EvidenceChainSet(GMBaseModel):
    facts: List[str] = Field(default_factory=list)
    origins: List[EvidenceOrigin] = Field(default_factory=list)

    @property
    def chains(self) -> List[Chain]:
        return [o.chain for o in self.origins]

    def __len__(self) -> int:
        return len(self.facts)


class TurnRecord(GMBaseModel):
    turn_index: int = Field(ge=0)
    generation: str
    action: TurnAction
    injected_result: Optional[str] = None


class ReasoningChain(GMBaseModel):
    sub_question: SubQuestion
    turns: List[TurnRecord] = Field(default_factory=list)
    retrieval_count: int = Field(0, ge=0)
    evidence: EvidenceChainSet = Field(default_factory=EvidenceChainSet)
    answer: Optional[str] = None
    # The answer stage reply as generated, kept for replay.
    answer_generation: Optional[str] = None
    status: CHAIN_STATUS = "completed"
    error: Optional[str] = None

    @property
    def chain_id(self) -> str:
        return chain_id_for(self.sub_question.index)


def chain_id_for(index: int) -> str:
    """The backend routing id of the chain answering sub-question ``index``."""
    return f"q{index}"


# Synthesis.


class SubAnswer(GMBaseModel):
    sub_question: SubQuestion
    text: str = Field(min_length=1)
    evidence: EvidenceChainSet = Field(default_factory=EvidenceChainSet)
    suppressed: bool = False

    @property
    def index(self) -> int:
        return self.sub_question.index


class ConflictReport(GMBaseModel):
    pair: Tuple[int, int]
    rule: str
    description: str
    resolution: int

    @model_validator(mode="after")
    def kept_in_pair(self) -> "ConflictReport":
        if self.resolution not in self.pair:
            raise ValueError(f"resolution {self.resolution} is not one of {self.pair}")
        return self


class SupportScore(GMBaseModel):
    chain_count: int = Field(0, ge=0)
    relation_breadth: int = Field(0, ge=0)
    query_overlap: int = Field(0, ge=0)

    def as_tuple(self) -> Tuple[int, int, int]:
        return (self.chain_count, self.relation_breadth, self.query_overlap)


# Audit.


class AuditConfig(GMBaseModel):
    pipeline: PipelineConfig
    graph: Optional[GraphSource] = None


class AuditRecord(GMBaseModel):
    query: str
    config: AuditConfig
    decomposition: Optional[DecompositionResult] = None
    chains: List[ReasoningChain] = Field(default_factory=list)
    conflicts: List[ConflictReport] = Field(default_factory=list)
    final_answer: Optional[str] = None
    # The synthesis reply as generated, kept for replay.
    synthesis_generation: Optional[str] = None
    timings: Dict[str, float] = Field(default_factory=dict)
    started_at: datetime
    finished_at: Optional[datetime] = None

    def comparable(self) -> Dict[str, Any]:
        """The record without wall-clock fields, for determinism checks."""
        return self.model_dump(
            mode="json", exclude={"timings", "started_at", "finished_at"}
        )
