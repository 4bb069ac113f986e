"""Three-stage retrieval cascade over an in-memory corpus.

Stage 1 scores every passage by dense cosine similarity (exact search: at
desk scale the IVF parameters in CascadeConfig are carried for configuration
parity and ignored). Stage 2 fuses dense and sparse lexical scores linearly.
Stage 3 applies an optional pluggable cross scorer. Inspector-driven
expansion merges later retrievals into a capped, deduplicated document pool.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import log
from typing import Callable, Iterable

import numpy as np

from .embedding import Embedder, tokenize, unit_normalize
from .errors import DuplicateId, EmbedderFailure, EmptyCorpus, ParseError, ScorerFailure


@dataclass(frozen=True)
class Passage:
    id: str
    title: str
    body: str


@dataclass
class ScoredPassage:
    """A retrieval candidate with per-stage scores. Scores live in [0, 1]."""

    passage: Passage
    dense_score: float
    sparse_score: float | None = None
    hybrid_score: float | None = None
    rerank_score: float | None = None
    rank: int = 0

    @property
    def passage_id(self) -> str:
        return self.passage.id


@dataclass
class CascadeConfig:
    """Cascade sizes and fusion weight.

    Defaults follow the deployed configuration: 100 dense candidates cut to
    30 hybrid survivors cut to a final 10, with fusion weight 0.65 toward the
    dense score, at most 3 expansion rounds and 25 pooled documents per
    subquestion. ivf_nlist/ivf_nprobe describe the large-corpus ANN layout
    and are unused by the exact in-memory index (kept below 100k passages).
    """

    k1: int = 100
    k2: int = 30
    k3: int = 10
    alpha: float = 0.65
    ivf_nlist: int = 4096
    ivf_nprobe: int = 128
    max_expansion_iters: int = 3
    max_pool_docs: int = 25
    merge_strategy: str = "recent_first"

    def __post_init__(self):
        if not (1 <= self.k3 <= self.k2 <= self.k1):
            raise ValueError("cascade sizes must satisfy 1 <= k3 <= k2 <= k1")
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError("alpha must be in [0, 1]")
        if self.max_pool_docs < self.k3:
            raise ValueError("max_pool_docs must be >= k3")
        if self.merge_strategy not in ("recent_first", "append_end"):
            raise ValueError(f"unknown merge strategy {self.merge_strategy!r}")


def load_corpus(path: str) -> list[Passage]:
    """Load passages from JSONL records of {"id", "title", "text"}."""
    passages: list[Passage] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                passages.append(
                    Passage(id=str(record["id"]), title=record.get("title", ""), body=record["text"])
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(path, lineno, f"bad corpus record: {exc}") from exc
    return passages


class SparseScorer:
    """Lexical relevance via IDF-weighted token overlap.

    The raw score sums corpus IDF over tokens shared by query and passage;
    it is normalized by the query's total IDF mass, so a passage covering
    every query token scores exactly 1.0 (the per-query maximum) and zero
    overlap scores 0.0. Adding a shared informative token never lowers the
    score.
    """

    def __init__(self, corpus: Iterable[Passage]):
        self._doc_freq: dict[str, int] = {}
        self._n_docs = 0
        for passage in corpus:
            self._n_docs += 1
            for token in set(tokenize(passage.title + " " + passage.body)):
                self._doc_freq[token] = self._doc_freq.get(token, 0) + 1

    def idf(self, token: str) -> float:
        return log((self._n_docs + 1) / (self._doc_freq.get(token, 0) + 1)) + 1.0

    def score(self, query: str, passage: Passage) -> float:
        query_tokens = set(tokenize(query))
        if not query_tokens:
            return 0.0
        passage_tokens = set(tokenize(passage.title + " " + passage.body))
        total = sum(self.idf(t) for t in query_tokens)
        shared = sum(self.idf(t) for t in query_tokens & passage_tokens)
        return shared / total


class Index:
    """Immutable exact-cosine index over unit-normalized passage embeddings."""

    def __init__(self, passages: list[Passage], matrix: np.ndarray, embedder: Embedder):
        self.passages = passages
        self.matrix = matrix
        self.embedder = embedder

    def __len__(self) -> int:
        return len(self.passages)

    def dense_search(self, query: str, k1: int) -> list[ScoredPassage]:
        """Top-k1 passages by cosine, mapped to [0, 1] via (cos + 1) / 2.

        Descending score, ties broken by ascending passage id. Returns the
        whole corpus when it is smaller than k1.
        """
        if k1 < 1:
            raise ValueError("k1 must be >= 1")
        query_vec = self.embedder.embed(query)
        cosines = self.matrix @ query_vec
        scores = (cosines + 1.0) / 2.0
        order = sorted(range(len(self.passages)), key=lambda i: (-scores[i], self.passages[i].id))
        return [
            ScoredPassage(passage=self.passages[i], dense_score=float(scores[i]), rank=r + 1)
            for r, i in enumerate(order[:k1])
        ]


def build_index(corpus: list[Passage], embedder: Embedder) -> Index:
    """Embed a corpus into an Index; ids must be unique and the corpus non-empty."""
    if not corpus:
        raise EmptyCorpus("cannot index an empty corpus")
    seen: set[str] = set()
    rows = []
    for passage in corpus:
        if passage.id in seen:
            raise DuplicateId(passage.id)
        seen.add(passage.id)
        try:
            rows.append(unit_normalize(embedder.embed(passage.title + " " + passage.body)))
        except Exception as exc:
            raise EmbedderFailure(passage.id, exc) from exc
    return Index(passages=list(corpus), matrix=np.vstack(rows), embedder=embedder)


def hybrid_rerank(
    query: str,
    candidates: list[ScoredPassage],
    sparse: SparseScorer,
    alpha: float,
    k2: int,
) -> list[ScoredPassage]:
    """Fuse dense and sparse scores linearly and keep the top k2.

    hybrid = alpha * dense + (1 - alpha) * sparse, exactly. Descending
    hybrid score, ties broken by ascending passage id.
    """
    for candidate in candidates:
        candidate.sparse_score = sparse.score(query, candidate.passage)
        candidate.hybrid_score = alpha * candidate.dense_score + (1 - alpha) * candidate.sparse_score
    ordered = sorted(candidates, key=lambda c: (-c.hybrid_score, c.passage_id))[:k2]
    for rank, candidate in enumerate(ordered, start=1):
        candidate.rank = rank
    return ordered


CrossScorer = Callable[[str, Passage], float]


def cross_rerank(
    query: str,
    candidates: list[ScoredPassage],
    scorer: CrossScorer | None,
    k3: int,
) -> list[ScoredPassage]:
    """Re-rank with a pluggable scorer; without one, pass hybrid order through."""
    if scorer is None:
        ordered = candidates[:k3]
    else:
        for candidate in candidates:
            try:
                candidate.rerank_score = float(scorer(query, candidate.passage))
            except Exception as exc:
                raise ScorerFailure(candidate.passage_id, exc) from exc
        ordered = sorted(candidates, key=lambda c: (-c.rerank_score, c.passage_id))[:k3]
    for rank, candidate in enumerate(ordered, start=1):
        candidate.rank = rank
    return ordered


@dataclass
class _PoolEntry:
    scored: ScoredPassage
    round: int


@dataclass
class DocumentPool:
    """Deduplicated, capped accumulation of retrieval results.

    ``recent_first`` (the default) places each new round's unique documents
    ahead of older ones before truncating to the cap, so expansion evicts the
    oldest evidence; ``append_end`` preserves earlier evidence and lets new
    documents fill only the remaining slots.
    """

    cap: int = 25
    strategy: str = "recent_first"
    _entries: list[_PoolEntry] = field(default_factory=list)
    _next_round: int = 0

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def seen_ids(self) -> set[str]:
        return {e.scored.passage_id for e in self._entries}

    def passages(self) -> list[ScoredPassage]:
        return [e.scored for e in self._entries]

    def ids(self) -> list[str]:
        return [e.scored.passage_id for e in self._entries]

    def add_batch(self, results: list[ScoredPassage]) -> None:
        """Merge one retrieval round into the pool with id-based dedup."""
        incoming = [_PoolEntry(scored=s, round=self._next_round) for s in results]
        self._next_round += 1
        if self.strategy == "recent_first":
            ordered = incoming + self._entries
        else:
            ordered = self._entries + incoming
        merged: list[_PoolEntry] = []
        seen: set[str] = set()
        for entry in ordered:
            if entry.scored.passage_id in seen:
                continue
            seen.add(entry.scored.passage_id)
            merged.append(entry)
        self._entries = merged[: self.cap]

    def select_docs(self, k_solve: int, retries_exhausted: bool) -> list[ScoredPassage]:
        """Pick documents for the solver.

        While expansion retries remain, the newest rounds are preferred;
        once retries are exhausted the earliest rounds are used instead.
        Within a round, retrieval order is preserved.
        """
        if k_solve < 1:
            raise ValueError("k_solve must be >= 1")
        reverse = not retries_exhausted
        ordered = sorted(self._entries, key=lambda e: -e.round if reverse else e.round)
        return [e.scored for e in ordered[:k_solve]]


class RetrievalEngine:
    """The full cascade plus pool expansion, bound to one corpus and config."""

    def __init__(
        self,
        index: Index,
        sparse: SparseScorer,
        config: CascadeConfig | None = None,
        cross_scorer: CrossScorer | None = None,
    ):
        self.index = index
        self.sparse = sparse
        self.config = config or CascadeConfig()
        self.cross_scorer = cross_scorer

    def retrieve(self, query: str, trace: Callable[[dict], None] | None = None) -> list[ScoredPassage]:
        """Run dense -> hybrid -> cross stages; final list has length <= k3.

        ``trace``, when given, receives one payload with the query, the
        per-stage candidate counts, and the final document ids.
        """
        cfg = self.config
        stage1 = self.index.dense_search(query, cfg.k1)
        stage2 = hybrid_rerank(query, stage1, self.sparse, cfg.alpha, cfg.k2)
        stage3 = cross_rerank(query, stage2, self.cross_scorer, cfg.k3)
        if trace is not None:
            trace(
                {
                    "query": query,
                    "stage_sizes": {"dense": len(stage1), "hybrid": len(stage2), "final": len(stage3)},
                    "doc_ids": [s.passage_id for s in stage3],
                }
            )
        return stage3

    def new_pool(self, cap: int | None = None) -> DocumentPool:
        return DocumentPool(
            cap=self.config.max_pool_docs if cap is None else cap,
            strategy=self.config.merge_strategy,
        )


def expand_pool(
    engine: RetrievalEngine,
    rewritten_query: str,
    pool: DocumentPool,
    trace: Callable[[dict], None] | None = None,
) -> DocumentPool:
    """Retrieve for a rewritten query and merge the results into the pool.

    Deduplication and the pool cap are enforced by the pool itself; the
    caller tracks how many expansions it has spent against its budget.
    """
    pool.add_batch(engine.retrieve(rewritten_query, trace=trace))
    return pool
