import threading
from typing import TYPE_CHECKING, Any, Dict, Optional

import backoff
import httpx

from ..exceptions import BackendError, BackendTimeoutError
from ..logging import log_warning, logger
from ..models import GenerationRequest, GenerationResponse
from ..settings import settings
from ._base import BaseBackend

if TYPE_CHECKING:
    from ..settings import BackendConfig

BACKEND_NAME = "http"
DEFAULT_MODEL = "default"
DEFAULT_TIMEOUT = 60.0
DEFAULT_MAX_RETRIES = 3


def _is_permanent(e: Exception) -> bool:
    """Only server errors and timeouts are worth retrying."""
    return isinstance(e, httpx.HTTPStatusError) and e.response.status_code < 500


def _on_backoff(details: Dict[str, Any]) -> None:
    log_warning(
        "Retrying generation after {error} (attempt {tries})",
        error=repr(details.get("exception")),
        tries=details["tries"],
    )


class HTTPBackend(BaseBackend):
    """A generic chat-completion client.

    POSTs ``{model, messages, temperature, top_p, top_k, repetition_penalty,
    max_tokens}`` to ``endpoint`` and reads ``choices[0].message.content``.
    """

    NAME = BACKEND_NAME

    def __init__(
        self,
        endpoint: str,
        *,
        model: str | None = None,
        api_key: str | None = None,
        timeout: float = DEFAULT_TIMEOUT,
        max_retries: int = DEFAULT_MAX_RETRIES,
        backoff_factor: float = 0.5,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.endpoint = endpoint
        self.model = model or DEFAULT_MODEL
        self.api_key = api_key
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_factor = backoff_factor
        self._transport = transport
        self._client: Optional[httpx.Client] = None
        self._client_lock = threading.Lock()

    @classmethod
    def from_config(cls, config: "BackendConfig") -> "HTTPBackend":
        return cls(
            config.endpoint,
            model=config.model,
            api_key=settings.get_api_key(config.api_key_env),
            timeout=config.timeout,
            max_retries=config.max_retries,
        )

    @property
    def client(self) -> httpx.Client:
        """The underlying httpx client, built once and shared by every chain."""
        with self._client_lock:
            if self._client is None:
                headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
                self._client = httpx.Client(
                    timeout=self.timeout, headers=headers, transport=self._transport
                )
            return self._client

    def close(self) -> None:
        with self._client_lock:
            if self._client is not None:
                self._client.close()
                self._client = None

    def _prepare_body(self, request: GenerationRequest) -> Dict[str, Any]:
        return {
            "model": self.model,
            "messages": [
                {"role": m.role, "content": m.content} for m in request.messages
            ],
            **request.sampling.model_dump(),
            "max_tokens": request.max_tokens,
        }

    def _post(self, body: Dict[str, Any]) -> Dict[str, Any]:
        response = self.client.post(self.endpoint, json=body)
        response.raise_for_status()
        return response.json()

    def _post_with_retries(self, body: Dict[str, Any]) -> Dict[str, Any]:
        retrying = backoff.on_exception(
            backoff.expo,
            (httpx.TimeoutException, httpx.HTTPStatusError),
            max_tries=self.max_retries + 1,
            giveup=_is_permanent,
            factor=self.backoff_factor,
            on_backoff=_on_backoff,
        )(self._post)
        return retrying(body)

    @logger
    def generate(self, request: GenerationRequest) -> GenerationResponse:
        """Perform one logical generation, retrying server errors and timeouts."""
        body = self._prepare_body(request)
        try:
            data = self._post_with_retries(body)
        except httpx.TimeoutException as e:
            raise BackendTimeoutError(
                f"Request to {self.endpoint} timed out after {self.timeout}s"
            ) from e
        except httpx.HTTPStatusError as e:
            status = e.response.status_code
            raise BackendError(
                f"Request to {self.endpoint} failed with status {status}",
                status=status,
            ) from e
        except httpx.HTTPError as e:
            raise BackendError(f"Request to {self.endpoint} failed: {e}") from e
        except ValueError as e:
            raise BackendError(f"Response from {self.endpoint} is not JSON") from e

        try:
            choice = data["choices"][0]
            content = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as e:
            raise BackendError(
                f"Response from {self.endpoint} has no choices[0].message.content"
            ) from e
        return GenerationResponse(
            content=content or "",
            finish_reason=choice.get("finish_reason") or "stop",
        )
