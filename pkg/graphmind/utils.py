import difflib
from typing import TYPE_CHECKING, Type

from .backends import BaseBackend, backends

if TYPE_CHECKING:
    from .settings import BackendConfig

_BACKEND_NAMES = [backend.NAME.lower() for backend in backends]


def normalize_key(text: str) -> str:
    """Lowercase ``text`` and collapse runs of whitespace to single spaces."""
    return " ".join(text.lower().split())


def find_backend(backend_name: str | None) -> Type[BaseBackend]:
    """
    Find a backend class by name.

    Parameters:
        backend_name (Union[str, None]): The name of the backend to find.

    Returns:
        The backend class.

    Raises:
        ValueError: If the backend is not specified or is not found, with a suggestion for the closest match.
    """
    if backend_name is None:
        raise ValueError("No backend specified.")

    for backend_class in backends:
        if backend_class.NAME.lower() == backend_name.lower():
            return backend_class

    # Find the closest match
    backend_found = difflib.get_close_matches(
        backend_name.lower(), _BACKEND_NAMES, n=1
    )
    if backend_found:
        raise ValueError(
            f"Backend {backend_name!r} not found. Did you mean {backend_found[0]!r}?"
        )
    raise ValueError(f"Backend {backend_name} not found.")


def create_backend(config: "BackendConfig") -> BaseBackend:
    """Instantiate the backend described by ``config``."""
    return find_backend(config.kind).from_config(config)
