from typing import TYPE_CHECKING, List, Type

from ._base import BaseBackend
from .http import HTTPBackend
from .scripted import ScriptedBackend, load_script, script_from_audit

if TYPE_CHECKING:
    from ..models import GenerationRequest, GenerationResponse

backends: List[Type[BaseBackend]] = [ScriptedBackend, HTTPBackend]


def generate(backend: BaseBackend, request: "GenerationRequest") -> "GenerationResponse":
    """Run one generation on ``backend``."""
    return backend.generate(request)


__all__ = [
    "BaseBackend",
    "HTTPBackend",
    "ScriptedBackend",
    "backends",
    "generate",
    "load_script",
    "script_from_audit",
]
