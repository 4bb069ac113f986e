"""Uniform client for all agent model calls.

Two backends share one interface: an HTTP backend speaking a JSON
chat-completion protocol, and a deterministic scripted backend that serves
canned responses for tests and replays. Requests are routed by role, so one
gateway can point the planner, solver, inspectors, rewriters, judge, and
teacher at different endpoints or scripts.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field

import requests

from .errors import BackendMisconfigured, ParseError, ScriptExhausted, TransportError

ROLES = (
    "planner",
    "solver",
    "context_inspector",
    "reasoning_inspector",
    "subq_rewriter",
    "query_rewriter",
    "judge",
    "teacher",
)


@dataclass(frozen=True)
class DecodingParams:
    """Sampling parameters sent with a completion request."""

    temperature: float = 0.0
    top_p: float = 1.0
    max_tokens: int = 1024
    top_k: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not (0 < self.top_p <= 1):
            raise ValueError("top_p must be in (0, 1]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


#: Inference default: greedy decoding for reproducible evaluation runs.
GREEDY_DECODING = DecodingParams(temperature=0.0, top_p=1.0)
#: Rollout-sampling preset carried for parity with training-time generation;
#: unused by the inference pipeline.
TRAINING_SAMPLING = DecodingParams(temperature=1.0, top_p=0.9, top_k=20)


@dataclass
class ChatRequest:
    role_id: str
    system_prompt: str
    user_prompt: str
    decoding: DecodingParams = GREEDY_DECODING
    #: Groups requests belonging to one pipeline run (e.g. a question id) so
    #: scripted ordinal cursors never interleave across concurrent runs.
    context_id: str = ""


@dataclass
class ChatResponse:
    text: str
    latency_ms: int
    backend: str  # "http" or "scripted"


@dataclass
class ScriptEntry:
    """One canned completion, selected by turn ordinal or prompt substring."""

    role: str
    response: str
    ordinal: int | None = None
    match: str | None = None


@dataclass
class Script:
    entries: list[ScriptEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)


def load_script(path: str) -> Script:
    """Load a JSONL script of {"role", "ordinal"|"match", "response"} records."""
    entries: list[ScriptEntry] = []
    seen: set[tuple[str, int]] = set()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, lineno, f"invalid JSON: {exc}") from exc
            role = record.get("role")
            response = record.get("response")
            ordinal = record.get("ordinal")
            match = record.get("match")
            if not isinstance(role, str) or not isinstance(response, str):
                raise ParseError(path, lineno, "entry needs string 'role' and 'response'")
            if (ordinal is None) == (match is None):
                raise ParseError(path, lineno, "entry needs exactly one of 'ordinal'/'match'")
            if ordinal is not None:
                key = (role, int(ordinal))
                if key in seen:
                    raise ParseError(path, lineno, f"duplicate (role, ordinal) {key}")
                seen.add(key)
            entries.append(ScriptEntry(role=role, response=response, ordinal=ordinal, match=match))
    return Script(entries=entries)


class ScriptedBackend:
    """Deterministic backend replaying a Script.

    Each (role, context_id) pair has its own turn cursor, starting at 1 and
    advanced on every request. Lookup order per request: the entry whose
    ordinal equals the cursor, else the first entry (file order) whose
    ``match`` substring occurs in the user prompt. Match entries are
    reusable; ordinal entries fire on exactly one turn. A request can never
    consume another role's entries.
    """

    name = "scripted"

    def __init__(self, script: Script):
        self._by_ordinal = {
            (e.role, e.ordinal): e for e in script.entries if e.ordinal is not None
        }
        self._matchers: dict[str, list[ScriptEntry]] = {}
        for e in script.entries:
            if e.match is not None:
                self._matchers.setdefault(e.role, []).append(e)
        self._cursors: dict[tuple[str, str], int] = {}
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        key = (request.role_id, request.context_id)
        with self._lock:
            cursor = self._cursors.get(key, 0) + 1
            self._cursors[key] = cursor
        entry = self._by_ordinal.get((request.role_id, cursor))
        if entry is None:
            for candidate in self._matchers.get(request.role_id, ()):
                if candidate.match in request.user_prompt:
                    entry = candidate
                    break
        if entry is None:
            raise ScriptExhausted(request.role_id, cursor)
        return ChatResponse(text=entry.response, latency_ms=0, backend="scripted")


@dataclass
class HttpEndpoint:
    url: str
    model: str
    auth_token: str | None = None
    timeout_s: float = 60.0


class HttpBackend:
    """JSON-over-HTTP chat-completion client with bounded retries.

    Request body: {model, messages: [{role: system|user, content}],
    temperature, top_p, max_tokens}; the completion is read from
    choices[0].message.content. Transient transport failures (connection
    errors, timeouts, 5xx) are retried with exponential backoff.
    """

    name = "http"

    def __init__(self, endpoint: HttpEndpoint, *, retries: int = 3, backoff_s: float = 0.25):
        self.endpoint = endpoint
        self.retries = retries
        self.backoff_s = backoff_s

    def _payload(self, request: ChatRequest) -> dict:
        body = {
            "model": self.endpoint.model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.decoding.temperature,
            "top_p": request.decoding.top_p,
            "max_tokens": request.decoding.max_tokens,
        }
        if request.decoding.top_k is not None:
            body["top_k"] = request.decoding.top_k
        return body

    def complete(self, request: ChatRequest) -> ChatResponse:
        headers = {"Content-Type": "application/json"}
        if self.endpoint.auth_token:
            headers["Authorization"] = f"Bearer {self.endpoint.auth_token}"
        start = time.monotonic()
        last_error: Exception | None = None
        for attempt in range(self.retries):
            try:
                resp = requests.post(
                    self.endpoint.url,
                    json=self._payload(request),
                    headers=headers,
                    timeout=self.endpoint.timeout_s,
                )
            except requests.RequestException as exc:
                last_error = exc
            else:
                if resp.status_code >= 500:
                    last_error = TransportError(f"server error {resp.status_code}")
                elif resp.status_code >= 400:
                    raise TransportError(f"request rejected with {resp.status_code}")
                else:
                    try:
                        text = resp.json()["choices"][0]["message"]["content"]
                    except (KeyError, IndexError, TypeError, ValueError) as exc:
                        raise TransportError(f"malformed completion response: {exc}") from exc
                    latency_ms = max(1, int((time.monotonic() - start) * 1000))
                    return ChatResponse(text=text, latency_ms=latency_ms, backend="http")
            if attempt < self.retries - 1:
                time.sleep(self.backoff_s * (2**attempt))
        raise TransportError(f"{self.endpoint.url}: {last_error}") from last_error


class Gateway:
    """Routes completion requests to per-role backends.

    ``backends`` maps role ids to backend objects; ``default`` serves any
    role without an explicit mapping (the common case for scripted runs).
    """

    def __init__(self, backends: dict[str, object] | None = None, default: object | None = None):
        self.backends = dict(backends or {})
        self.default = default

    def complete(self, request: ChatRequest) -> ChatResponse:
        backend = self.backends.get(request.role_id, self.default)
        if backend is None:
            raise BackendMisconfigured(f"no backend for role {request.role_id!r}")
        return backend.complete(request)

    @classmethod
    def scripted(cls, script: Script) -> "Gateway":
        return cls(default=ScriptedBackend(script))
