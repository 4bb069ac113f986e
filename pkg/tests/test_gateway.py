"""Gateway backends: script loading, scripted lookup, HTTP integration."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from hopflow.errors import BackendMisconfigured, ParseError, ScriptExhausted, TransportError
from hopflow.gateway import (
    ChatRequest,
    DecodingParams,
    Gateway,
    HttpBackend,
    HttpEndpoint,
    Script,
    ScriptedBackend,
    load_script,
)

from .conftest import entry, write_jsonl


def request_for(role: str, user: str = "hello", context: str = "") -> ChatRequest:
    return ChatRequest(role_id=role, system_prompt="sys", user_prompt=user, context_id=context)


class TestDecodingParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            DecodingParams(temperature=-0.1)
        with pytest.raises(ValueError):
            DecodingParams(top_p=0.0)
        with pytest.raises(ValueError):
            DecodingParams(max_tokens=0)


class TestLoadScript:
    def test_loads_entries(self, tmp_path):
        path = write_jsonl(
            tmp_path / "s.jsonl",
            [
                {"role": "planner", "ordinal": 1, "response": "a"},
                {"role": "solver", "match": "sub", "response": "b"},
                {"role": "solver", "ordinal": 2, "response": "c"},
            ],
        )
        assert len(load_script(path)) == 3

    def test_duplicate_role_ordinal(self, tmp_path):
        path = write_jsonl(
            tmp_path / "s.jsonl",
            [
                {"role": "planner", "ordinal": 1, "response": "a"},
                {"role": "planner", "ordinal": 1, "response": "b"},
            ],
        )
        with pytest.raises(ParseError) as exc:
            load_script(path)
        assert exc.value.line == 2

    def test_needs_exactly_one_matcher(self, tmp_path):
        path = write_jsonl(tmp_path / "s.jsonl", [{"role": "planner", "response": "a"}])
        with pytest.raises(ParseError):
            load_script(path)

    def test_bad_json_line_number(self, tmp_path):
        path = tmp_path / "s.jsonl"
        path.write_text('{"role": "planner", "ordinal": 1, "response": "a"}\nnot json\n')
        with pytest.raises(ParseError) as exc:
            load_script(str(path))
        assert exc.value.line == 2


class TestScriptedBackend:
    def test_ordinal_lookup(self):
        backend = ScriptedBackend(Script([entry("planner", "first", ordinal=1)]))
        response = backend.complete(request_for("planner"))
        assert response.text == "first"
        assert response.backend == "scripted"
        assert response.latency_ms == 0

    def test_exhausted_for_unknown_role(self):
        backend = ScriptedBackend(Script([entry("planner", "x", ordinal=1)]))
        with pytest.raises(ScriptExhausted):
            backend.complete(request_for("solver"))

    def test_role_isolation(self):
        backend = ScriptedBackend(
            Script([entry("planner", "p1", ordinal=1), entry("solver", "s1", ordinal=1)])
        )
        assert backend.complete(request_for("solver")).text == "s1"
        assert backend.complete(request_for("planner")).text == "p1"

    def test_substring_match_fallback_reusable(self):
        backend = ScriptedBackend(Script([entry("solver", "matched", match="needle")]))
        for _ in range(3):
            assert backend.complete(request_for("solver", user="a needle b")).text == "matched"
        with pytest.raises(ScriptExhausted):
            backend.complete(request_for("solver", user="no match here"))

    def test_ordinal_cursor_isolated_per_context(self):
        backend = ScriptedBackend(
            Script([entry("planner", "p1", ordinal=1), entry("planner", "p2", ordinal=2)])
        )
        assert backend.complete(request_for("planner", context="q1")).text == "p1"
        assert backend.complete(request_for("planner", context="q2")).text == "p1"
        assert backend.complete(request_for("planner", context="q1")).text == "p2"


class TestGateway:
    def test_role_routing_and_default(self):
        planner_backend = ScriptedBackend(Script([entry("planner", "p", ordinal=1)]))
        default = ScriptedBackend(Script([entry("solver", "s", ordinal=1)]))
        gateway = Gateway(backends={"planner": planner_backend}, default=default)
        assert gateway.complete(request_for("planner")).text == "p"
        assert gateway.complete(request_for("solver")).text == "s"

    def test_misconfigured(self):
        with pytest.raises(BackendMisconfigured):
            Gateway().complete(request_for("planner"))


class _EchoHandler(BaseHTTPRequestHandler):
    fail_first = 0

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if type(self).fail_first > 0:
            type(self).fail_first -= 1
            self.send_response(503)
            self.end_headers()
            return
        payload = {
            "choices": [
                {"message": {"content": f"echo:{body['messages'][1]['content']}"}}
            ]
        }
        data = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def echo_server():
    server = HTTPServer(("127.0.0.1", 0), _EchoHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


class TestHttpBackend:
    def test_round_trip_against_stub(self, echo_server):
        backend = HttpBackend(HttpEndpoint(url=echo_server, model="m"))
        response = backend.complete(request_for("solver", user="ping"))
        assert response.text == "echo:ping"
        assert response.backend == "http"
        assert response.latency_ms > 0

    def test_retries_transient_then_succeeds(self, echo_server):
        _EchoHandler.fail_first = 2
        backend = HttpBackend(HttpEndpoint(url=echo_server, model="m"), retries=3, backoff_s=0.01)
        assert backend.complete(request_for("solver", user="x")).text == "echo:x"

    def test_exhausted_retries_raise(self, echo_server):
        _EchoHandler.fail_first = 10
        backend = HttpBackend(HttpEndpoint(url=echo_server, model="m"), retries=2, backoff_s=0.01)
        with pytest.raises(TransportError):
            backend.complete(request_for("solver", user="x"))
        _EchoHandler.fail_first = 0

    def test_connection_refused(self):
        backend = HttpBackend(
            HttpEndpoint(url="http://127.0.0.1:1", model="m", timeout_s=0.2),
            retries=2,
            backoff_s=0.01,
        )
        with pytest.raises(TransportError):
            backend.complete(request_for("solver"))
