from abc import ABC, abstractmethod
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from ..models import GenerationRequest, GenerationResponse
    from ..settings import BackendConfig


class BaseBackend(ABC):
    """The base generation backend class.

    Backends must tolerate concurrent ``generate`` calls from parallel chains.
    """

    NAME: str

    @classmethod
    @abstractmethod
    def from_config(cls, config: "BackendConfig") -> "BaseBackend":
        """Build the backend from its run configuration."""
        raise NotImplementedError

    @abstractmethod
    def generate(self, request: "GenerationRequest") -> "GenerationResponse":
        """Produce one completion for ``request``."""
        raise NotImplementedError

    def close(self) -> None:
        """Release any held resources."""

    def __enter__(self) -> "BaseBackend":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} name={self.NAME!r}>"
