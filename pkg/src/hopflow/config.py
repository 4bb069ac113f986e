"""Pipeline configuration and config-file loading."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from .embedding import Embedder, HashingEmbedder, HttpEmbedder
from .errors import ConfigError
from .gateway import Gateway, HttpBackend, HttpEndpoint, ROLES
from .retrieval import CascadeConfig


@dataclass
class PipelineConfig:
    """Per-question execution budgets, limits, and feature toggles.

    max_ctx_expansions and max_posthoc_expansions bound inspector-driven
    retrieval expansion before and after solving; pool_cap caps the
    per-subquestion document pool; solve_docs is how many documents the
    solver sees; cache_tau is the evidence-cache similarity threshold. The
    doc limits and per-document character truncation apply to what each
    inspector is shown.
    """

    max_ctx_expansions: int = 3
    max_posthoc_expansions: int = 3
    pool_cap: int = 25
    solve_docs: int = 10
    cache_tau: float = 0.85
    ctx_doc_limit: int = 20
    rea_doc_limit: int = 25
    doc_char_limit: int = 900
    memoize_on: bool = True
    context_inspector_on: bool = True
    reasoning_inspector_on: bool = True
    planner_on: bool = True
    global_cache: bool = False
    merge_strategy: str = "recent_first"
    question_deadline_s: float = 300.0

    def __post_init__(self):
        if self.max_ctx_expansions < 0 or self.max_posthoc_expansions < 0:
            raise ValueError("expansion budgets must be >= 0")
        if self.solve_docs > self.pool_cap:
            raise ValueError("solve_docs must be <= pool_cap")
        if not (0 < self.cache_tau <= 1):
            raise ValueError("cache_tau must be in (0, 1]")


@dataclass
class RunConfig:
    """Everything a run needs: corpus, cascade, pipeline, gateway, embedder."""

    corpus_path: str
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    gateway_spec: dict = field(default_factory=dict)
    embedder_spec: dict = field(default_factory=dict)

    def build_embedder(self) -> Embedder:
        spec = self.embedder_spec or {}
        kind = spec.get("kind", "hashing")
        if kind == "hashing":
            return HashingEmbedder(dim=int(spec.get("dim", 256)))
        if kind == "http":
            try:
                return HttpEmbedder(
                    url=spec["url"],
                    dim=int(spec["dim"]),
                    auth_token=_auth_token(spec),
                )
            except KeyError as exc:
                raise ConfigError(f"http embedder needs {exc} in config") from exc
        raise ConfigError(f"unknown embedder kind {kind!r}")

    def build_gateway(self) -> Gateway:
        """Build an HTTP gateway from the per-role endpoint spec."""
        spec = self.gateway_spec or {}
        default_spec = spec.get("default")
        backends = {}
        for role, role_spec in spec.get("roles", {}).items():
            if role not in ROLES:
                raise ConfigError(f"unknown gateway role {role!r}")
            backends[role] = _http_backend(role_spec)
        default = _http_backend(default_spec) if default_spec else None
        if not backends and default is None:
            raise ConfigError("gateway config has no endpoints; use --scripted for scripted runs")
        return Gateway(backends=backends, default=default)


def _auth_token(spec: dict) -> str | None:
    """Token from config, overridable by the named environment variable."""
    env_name = spec.get("auth_env")
    if env_name and os.environ.get(env_name):
        return os.environ[env_name]
    return spec.get("auth_token")


def _http_backend(spec: dict) -> HttpBackend:
    try:
        endpoint = HttpEndpoint(
            url=spec["url"],
            model=spec.get("model", "default"),
            auth_token=_auth_token(spec),
            timeout_s=float(spec.get("timeout_s", 60.0)),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad gateway endpoint spec: {exc}") from exc
    return HttpBackend(endpoint, retries=int(spec.get("retries", 3)))


def _filter_fields(cls, raw: dict, where: str) -> dict:
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown {where} option(s): {sorted(unknown)}")
    return raw


def load_config(path: str) -> RunConfig:
    """Load a JSON run config.

    Layout: {"corpus": path, "cascade": {...}, "pipeline": {...},
    "gateway": {"default": {...}, "roles": {...}}, "embedder": {...}}.
    The shared expansion knob ``max_expansion_iters`` under "cascade" also
    seeds both pipeline expansion budgets unless they are set explicitly.
    """
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if "corpus" not in raw:
        raise ConfigError("config needs a 'corpus' path")

    cascade_raw = dict(raw.get("cascade", {}))
    pipeline_raw = dict(raw.get("pipeline", {}))
    shared_iters = cascade_raw.get("max_expansion_iters")
    if shared_iters is not None:
        pipeline_raw.setdefault("max_ctx_expansions", shared_iters)
        pipeline_raw.setdefault("max_posthoc_expansions", shared_iters)
    try:
        cascade = CascadeConfig(**_filter_fields(CascadeConfig, cascade_raw, "cascade"))
        pipeline = PipelineConfig(**_filter_fields(PipelineConfig, pipeline_raw, "pipeline"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(
        corpus_path=raw["corpus"],
        cascade=cascade,
        pipeline=pipeline,
        gateway_spec=raw.get("gateway", {}),
        embedder_spec=raw.get("embedder", {}),
    )
