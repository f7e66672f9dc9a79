import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import httpx
import pytest

from graphmind.backends import HTTPBackend, ScriptedBackend, load_script
from graphmind.exceptions import BackendError, BackendTimeoutError, ScriptError, ScriptExhaustedError
from graphmind.models import GenerationRequest, Message
from graphmind.settings import BackendConfig, SamplingParams
from graphmind.utils import create_backend, find_backend

ENDPOINT = "http://model.test/v1/chat/completions"


def _request(chain_id="root", content="hello"):
    return GenerationRequest(messages=[Message(role="user", content=content)], chain_id=chain_id)


def _completion(content="ok"):
    return {"choices": [{"message": {"role": "assistant", "content": content}, "finish_reason": "stop"}]}


# scripted


def test_scripted_replies_in_step_order():
    backend = ScriptedBackend.from_chains({"q1": ["first", "second"]})
    assert backend.generate(_request("q1")).content == "first"
    assert backend.generate(_request("q1")).content == "second"
    with pytest.raises(ScriptExhaustedError) as exc:
        backend.generate(_request("q1"))
    assert (exc.value.chain, exc.value.step) == ("q1", 2)


def test_scripted_chains_are_independent():
    backend = ScriptedBackend.from_chains({"root": ["decomposed"], "q0": ["turn"]})
    assert backend.generate(_request("q0")).content == "turn"
    assert backend.generate(_request("root")).content == "decomposed"
    assert backend.steps_used("q0") == 1
    assert backend.steps_used("q1") == 0


def test_scripted_ignores_prompt_content():
    backend = ScriptedBackend.from_chains({"root": ["same"]})
    assert backend.generate(_request(content="anything at all")).content == "same"


def test_scripted_logs_requests():
    backend = ScriptedBackend.from_chains({"root": ["a"]})
    request = _request()
    backend.generate(request)
    assert backend.requests == [request]


def test_load_script_fixture(fatigue_backend):
    assert ("root", 0) in fatigue_backend.entries
    assert ("q0", 0) in fatigue_backend.entries


def test_duplicate_script_entry(tmp_path):
    path = tmp_path / "script.jsonl"
    line = json.dumps({"chain": "q0", "step": 0, "content": "x"})
    path.write_text(f"{line}\n{line}\n", encoding="utf-8")
    with pytest.raises(ScriptError) as exc:
        load_script(path)
    assert exc.value.line == 2


def test_invalid_script_line(tmp_path):
    path = tmp_path / "script.jsonl"
    path.write_text('{"chain": "q0", "step": -1, "content": "x"}\n', encoding="utf-8")
    with pytest.raises(ScriptError) as exc:
        load_script(path)
    assert exc.value.line == 1


def test_missing_script_file(tmp_path):
    with pytest.raises(ScriptError):
        load_script(tmp_path / "absent.jsonl")


def test_dump_round_trip(tmp_path):
    backend = ScriptedBackend.from_chains({"root": ["a", "b"], "q0": ["c"]})
    path = tmp_path / "dumped.jsonl"
    backend.dump(path)
    assert load_script(path).entries == backend.entries


def test_default_sampling():
    request = _request()
    assert request.sampling == SamplingParams(
        temperature=0.7, top_p=0.8, top_k=20, repetition_penalty=1.05
    )


# registry


def test_find_backend():
    assert find_backend("scripted") is ScriptedBackend
    assert find_backend("HTTP") is HTTPBackend


def test_find_backend_suggests_closest():
    with pytest.raises(ValueError, match="Did you mean 'scripted'"):
        find_backend("scriptd")


def test_create_backend_from_config(fixtures_dir):
    config = BackendConfig(kind="scripted", script=fixtures_dir / "fatigue_script.jsonl")
    assert isinstance(create_backend(config), ScriptedBackend)


# http


class Recorder:
    """A MockTransport handler replaying a list of responses."""

    def __init__(self, *responses):
        self.responses = list(responses)
        self.calls = []

    def __call__(self, request: httpx.Request) -> httpx.Response:
        self.calls.append(request)
        response = self.responses.pop(0) if len(self.responses) > 1 else self.responses[0]
        if isinstance(response, Exception):
            raise response
        return response


def _backend(handler, **kwargs):
    return HTTPBackend(
        ENDPOINT,
        model="test-model",
        api_key="secret",
        backoff_factor=0,
        transport=httpx.MockTransport(handler),
        **kwargs,
    )


def test_http_success_sends_sampling():
    handler = Recorder(httpx.Response(200, json=_completion("fatigue")))
    with _backend(handler) as backend:
        response = backend.generate(_request())
    assert response.content == "fatigue"
    assert response.finish_reason == "stop"
    body = json.loads(handler.calls[0].content)
    assert body["model"] == "test-model"
    assert body["messages"] == [{"role": "user", "content": "hello"}]
    assert (body["temperature"], body["top_p"], body["top_k"], body["repetition_penalty"]) == (
        0.7,
        0.8,
        20,
        1.05,
    )
    assert body["max_tokens"] == 2048
    assert handler.calls[0].headers["Authorization"] == "Bearer secret"


def test_http_retries_server_errors():
    handler = Recorder(
        httpx.Response(503),
        httpx.Response(502),
        httpx.Response(200, json=_completion("recovered")),
    )
    assert _backend(handler).generate(_request()).content == "recovered"
    assert len(handler.calls) == 3


def test_http_gives_up_after_max_retries():
    handler = Recorder(httpx.Response(500))
    with pytest.raises(BackendError) as exc:
        _backend(handler, max_retries=3).generate(_request())
    assert exc.value.status == 500
    assert len(handler.calls) == 4


def test_http_client_errors_are_not_retried():
    handler = Recorder(httpx.Response(401))
    with pytest.raises(BackendError) as exc:
        _backend(handler).generate(_request())
    assert exc.value.status == 401
    assert len(handler.calls) == 1


def test_http_timeout():
    handler = Recorder(httpx.ReadTimeout("slow"))
    with pytest.raises(BackendTimeoutError):
        _backend(handler, max_retries=1).generate(_request())
    assert len(handler.calls) == 2


def test_http_response_without_content():
    handler = Recorder(httpx.Response(200, json={"choices": []}))
    with pytest.raises(BackendError):
        _backend(handler).generate(_request())


def test_http_response_not_json():
    handler = Recorder(httpx.Response(200, text="<html>"))
    with pytest.raises(BackendError):
        _backend(handler).generate(_request())


def test_http_client_is_built_once_across_threads(monkeypatch):
    built = []
    real_client = httpx.Client

    class SlowClient(real_client):
        def __init__(self, **kwargs):
            built.append(self)
            time.sleep(0.01)
            super().__init__(**kwargs)

    monkeypatch.setattr(httpx, "Client", SlowClient)
    backend = _backend(Recorder(httpx.Response(200, json={})))
    barrier = threading.Barrier(8)

    def grab(_):
        barrier.wait()
        return backend.client

    with ThreadPoolExecutor(max_workers=8) as pool:
        clients = list(pool.map(grab, range(8)))
    assert len(built) == 1
    assert all(c is clients[0] for c in clients)
    backend.close()
    assert clients[0].is_closed