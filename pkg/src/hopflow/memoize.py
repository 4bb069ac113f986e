"""Semantic evidence cache and the cascade guard.

The evidence store caches (subquestion, answer) pairs keyed by embedding
similarity: a lookup hits when the best cosine reaches the threshold. The
default scope is one question (a fresh store per question prevents
cross-contamination); a global store can be shared across questions to reuse
answers over a whole dataset. The cascade guard blocks subquestions that
depend on rejected or missing prior answers before they can propagate.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .embedding import Embedder
from .protocol import extract_placeholder_refs

#: Answers matching any of these substrings (case-insensitive), or empty
#: answers, are treated as rejections by the guard and the execution guard.
DEFAULT_REJECTION_PATTERNS = (
    "not found in the documents",
    "cannot answer from provided documents",
)

#: Appended in place of an answer when the guard blocks a subquestion.
REJECTION_ANSWER = "Not found in the documents"

GUARD_OK = "ok"
GUARD_REWRITE_NEEDED = "rewrite_needed"
GUARD_BLOCKED = "blocked"


def is_rejected_answer(answer: str, patterns: tuple[str, ...] = DEFAULT_REJECTION_PATTERNS) -> bool:
    text = answer.strip().lower()
    if not text:
        return True
    return any(pattern in text for pattern in patterns)


@dataclass
class EvidenceEntry:
    subquestion: str
    embedding: np.ndarray
    answer: str


class EvidenceStore:
    """Append-only cache of answered subquestions, safe for shared use.

    Entries are guarded by a lock so a global store can serve concurrent
    question runs; in per-question mode each run owns its store outright.
    """

    def __init__(self, question_id: str | None = None):
        self.question_id = question_id
        self.entries: list[EvidenceEntry] = []
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.entries)

    def snapshot(self) -> list[EvidenceEntry]:
        with self._lock:
            return list(self.entries)

    def append(self, entry: EvidenceEntry) -> None:
        with self._lock:
            self.entries.append(entry)

    def clear(self) -> None:
        with self._lock:
            self.entries.clear()

    def export_jsonl(self, path: str) -> None:
        """Write {subquestion, answer} pairs, one per line."""
        with open(path, "w", encoding="utf-8") as f:
            for entry in self.snapshot():
                f.write(
                    json.dumps(
                        {"subquestion": entry.subquestion, "answer": entry.answer},
                        sort_keys=True,
                    )
                    + "\n"
                )

    def load_jsonl(self, path: str, embedder: Embedder) -> None:
        """Re-embed and append previously exported pairs."""
        with open(path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                store_answer(self, record["subquestion"], record["answer"], embedder)


def lookup(
    store: EvidenceStore,
    subquestion: str,
    tau: float,
    embedder: Embedder,
    trace: Callable[[dict], None] | None = None,
) -> str | None:
    """Return the cached answer whose subquestion is most similar, if close enough.

    The hit rule is max-cosine >= tau over all entries; ties go to the
    earliest-stored entry. On a hit the optional ``trace`` callback receives
    the matched entry and its similarity.
    """
    if not (0 < tau <= 1):
        raise ValueError("tau must be in (0, 1]")
    entries = store.snapshot()
    if not entries:
        return None
    query_vec = embedder.embed(subquestion)
    best: EvidenceEntry | None = None
    best_sim = -np.inf
    for entry in entries:
        sim = float(np.dot(query_vec, entry.embedding))
        if sim > best_sim:
            best_sim = sim
            best = entry
    if best is None or best_sim < tau:
        return None
    if trace is not None:
        trace(
            {
                "subquestion": subquestion,
                "matched_subquestion": best.subquestion,
                "answer": best.answer,
                "similarity": best_sim,
            }
        )
    return best.answer


def store_answer(store: EvidenceStore, subquestion: str, answer: str, embedder: Embedder) -> EvidenceStore:
    """Cache a finalized answer under a fresh embedding of its subquestion."""
    store.append(
        EvidenceEntry(subquestion=subquestion, embedding=embedder.embed(subquestion), answer=answer)
    )
    return store


def clear(store: EvidenceStore) -> EvidenceStore:
    """Empty the store; idempotent, and the trajectory log is untouched."""
    store.clear()
    return store


@dataclass
class GuardVerdict:
    status: str  # GUARD_OK | GUARD_REWRITE_NEEDED | GUARD_BLOCKED
    offending_indices: list[int] = field(default_factory=list)


def cascade_guard(
    subquestion: str,
    prior_answers: list[str],
    patterns: tuple[str, ...] = DEFAULT_REJECTION_PATTERNS,
) -> GuardVerdict:
    """Check whether a subquestion depends on missing or rejected answers.

    Returns rewrite_needed with the offending placeholder indices when any
    referenced [ANSWER_i] is out of range or its answer matches a rejection
    pattern; ok otherwise. The blocked status is issued by the orchestrator
    after a failed rewrite, not here.
    """
    offending: list[int] = []
    for ref in extract_placeholder_refs(subquestion):
        if ref.index in offending:
            continue
        if ref.index >= len(prior_answers) or is_rejected_answer(prior_answers[ref.index], patterns):
            offending.append(ref.index)
    status = GUARD_REWRITE_NEEDED if offending else GUARD_OK
    return GuardVerdict(status=status, offending_indices=offending)
