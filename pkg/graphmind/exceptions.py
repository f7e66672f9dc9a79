from typing import TYPE_CHECKING, List, Optional

if TYPE_CHECKING:
    from .models import AuditRecord


class GraphmindError(Exception):
    """The base graphmind exception."""


# Graph store.


class GraphLoadError(GraphmindError, ValueError):
    """A triple source could not be parsed."""

    def __init__(self, message: str, *, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyGraphError(GraphLoadError):
    """The triple source held no triples."""


class EntityNotFoundError(GraphmindError, LookupError):
    """An entity id is not part of the graph."""

    def __init__(self, entity: str):
        self.entity = entity
        super().__init__(f"Entity {entity!r} not found in graph.")

    def __str__(self) -> str:
        return self.args[0]


# Entity linking.


class InvalidInputError(GraphmindError, ValueError):
    """Input text is empty or otherwise unusable."""


class DimensionMismatchError(GraphmindError, ValueError):
    """Two embedding vectors have different dimensions."""


# Control protocol.


class MalformedBlockError(GraphmindError, ValueError):
    """A search block is unclosed or carries the wrong number of mentions."""


# Backends.


class ScriptError(GraphmindError, ValueError):
    """A generation script could not be parsed."""

    def __init__(self, message: str, *, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BackendError(GraphmindError, RuntimeError):
    """A generation backend failed to produce a response."""

    def __init__(self, message: str, *, status: Optional[int] = None):
        self.status = status
        super().__init__(message)


class ScriptExhaustedError(BackendError):
    """The scripted backend has no reply for the requested step."""

    def __init__(self, chain: str, step: int):
        self.chain = chain
        self.step = step
        super().__init__(f"Script has no entry for chain {chain!r}, step {step}.")


class BackendTimeoutError(BackendError, TimeoutError):
    """The backend did not answer within the configured timeout."""


# Pipeline stages.


class DecompositionParseError(GraphmindError, ValueError):
    """No numbered sub-question could be parsed from the model output."""


class StageError(GraphmindError, RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {cause}")


class WorkspaceError(GraphmindError, RuntimeError):
    """A workspace invariant was violated."""


class PipelineError(GraphmindError, RuntimeError):
    """The pipeline could not produce an answer.

    ``audit`` holds whatever partial record was assembled before the failure.
    """

    def __init__(self, message: str, *, audit: Optional["AuditRecord"] = None):
        self.audit = audit
        super().__init__(message)


class ConfigError(GraphmindError, ValueError):
    """The run configuration is incomplete or invalid."""

    def __init__(self, message: str, *, missing: Optional[List[str]] = None):
        self.missing = missing or []
        if self.missing:
            message = f"{message} Missing keys: {', '.join(self.missing)}"
        super().__init__(message)
