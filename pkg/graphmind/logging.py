import functools
import time
from typing import Any, Callable

import logfire

from .settings import settings


def logger(func: Callable[..., Any]) -> Callable[..., Any]:
    """A decorator that wraps the call in a logfire span and logs its duration
    and any exception raised, if logging is enabled.

    Arguments are not logged: graphs and backends are large and opaque.
    """

    @functools.wraps(func)
    def wrapper(*args, **kwargs) -> Any:
        if not settings.logging.is_enabled:
            return func(*args, **kwargs)

        t1 = time.perf_counter()
        with logfire.span("graphmind.{function}", function=func.__name__):
            try:
                result = func(*args, **kwargs)
            except Exception as e:
                t2 = time.perf_counter()
                logfire.error(
                    "Error in {function}: {error} after {duration:.3f}s",
                    function=func.__name__,
                    error=repr(e),
                    duration=t2 - t1,
                )
                raise
            t2 = time.perf_counter()
            logfire.info(
                "{function} finished in {duration:.3f}s",
                function=func.__name__,
                duration=t2 - t1,
            )
            return result

    return wrapper


def log_info(message: str, **attributes: Any) -> None:
    """Emit a structured info record through logfire, if logging is enabled."""
    if settings.logging.is_enabled:
        logfire.info(message, **attributes)


def log_warning(message: str, **attributes: Any) -> None:
    """Emit a structured warning record through logfire, if logging is enabled."""
    if settings.logging.is_enabled:
        logfire.warn(message, **attributes)
