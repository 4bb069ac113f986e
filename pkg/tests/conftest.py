"""Shared fixtures: synthetic corpora, scripted gateways, pipeline builders."""

from __future__ import annotations

import json
import random

import pytest

from hopflow.config import PipelineConfig
from hopflow.embedding import HashingEmbedder
from hopflow.gateway import Gateway, Script, ScriptEntry
from hopflow.orchestrator import Pipeline
from hopflow.retrieval import CascadeConfig, Passage, RetrievalEngine, SparseScorer, build_index

_WORDS = (
    "river mountain treaty harbor violin comet granite meadow lantern archive "
    "orchid falcon quarry bridge saffron glacier anthem mosaic timber beacon "
    "cipher monsoon prairie ember atlas sonata marble drift canyon relic"
).split()


def synthetic_corpus(n: int, seed: int = 7) -> list[Passage]:
    """Passages with distinct pseudo-random token bodies."""
    rng = random.Random(seed)
    passages = []
    for i in range(n):
        body = " ".join(rng.choices(_WORDS, k=12)) + f" fact{i}"
        passages.append(Passage(id=f"p{i:03d}", title=f"Entry {i}", body=body))
    return passages


def make_engine(corpus: list[Passage], embedder=None, **cascade_overrides) -> RetrievalEngine:
    embedder = embedder or HashingEmbedder()
    config = CascadeConfig(**cascade_overrides) if cascade_overrides else CascadeConfig()
    return RetrievalEngine(build_index(corpus, embedder), SparseScorer(corpus), config)


def entry(role: str, response: str, ordinal: int | None = None, match: str | None = None) -> ScriptEntry:
    if ordinal is None and match is None:
        match = ""
    return ScriptEntry(role=role, response=response, ordinal=ordinal, match=match)


def audit(stage: str, explanation: str = "OK") -> str:
    return f"<error_stage>{stage}</error_stage>\n<explanation>{explanation}</explanation>"


def solver(answer: str, sources: str = "[Doc_1]", reasoning: str = "Stated in the documents.") -> str:
    return (
        f"<reasoning>{reasoning}</reasoning>\n<sources>{sources}</sources>\n<answer>{answer}</answer>"
    )


def plan(subquestions: list[str], reasoning: str = "Split into dependent facts.") -> str:
    numbered = "\n".join(f"{i + 1}. {s}" for i, s in enumerate(subquestions))
    return f"<reasoning>{reasoning}</reasoning>\n<subquestions>\n{numbered}\n</subquestions>"


def make_pipeline(
    entries: list[ScriptEntry],
    corpus: list[Passage],
    config: PipelineConfig | None = None,
    embedder=None,
    **cascade_overrides,
) -> Pipeline:
    embedder = embedder or HashingEmbedder()
    return Pipeline(
        gateway=Gateway.scripted(Script(entries=list(entries))),
        engine=make_engine(corpus, embedder, **cascade_overrides),
        embedder=embedder,
        config=config or PipelineConfig(),
    )


def write_jsonl(path, rows) -> str:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")
    return str(path)


@pytest.fixture
def small_corpus() -> list[Passage]:
    return synthetic_corpus(30)
