"""Evidence cache hit semantics, rejection patterns, and the cascade guard."""

from __future__ import annotations

import numpy as np
import pytest

from hopflow.embedding import HashingEmbedder
from hopflow.memoize import (
    EvidenceStore,
    GUARD_OK,
    GUARD_REWRITE_NEEDED,
    cascade_guard,
    clear,
    is_rejected_answer,
    lookup,
    store_answer,
)


@pytest.fixture
def embedder():
    return HashingEmbedder()


class TestLookup:
    def test_identical_text_hits(self, embedder):
        store = EvidenceStore()
        store_answer(store, "Who directed Parasite?", "Bong Joon-ho", embedder)
        assert lookup(store, "Who directed Parasite?", 0.85, embedder) == "Bong Joon-ho"

    def test_empty_store_misses(self, embedder):
        assert lookup(EvidenceStore(), "anything", 0.85, embedder) is None

    def test_near_paraphrase_above_threshold(self, embedder):
        stored = "who directed the film parasite"
        probe = "who directed film parasite"
        store = EvidenceStore()
        store_answer(store, stored, "Bong Joon-ho", embedder)
        # Independent cosine oracle on the fixture pair.
        cos = float(np.dot(embedder.embed(stored), embedder.embed(probe)))
        assert 0.85 <= cos < 1.0
        assert lookup(store, probe, 0.85, embedder) == "Bong Joon-ho"

    def test_paraphrase_below_threshold_misses(self, embedder):
        stored = "who directed the film parasite"
        probe = "who directed parasite"
        store = EvidenceStore()
        store_answer(store, stored, "Bong Joon-ho", embedder)
        cos = float(np.dot(embedder.embed(stored), embedder.embed(probe)))
        assert cos < 0.85
        assert lookup(store, probe, 0.85, embedder) is None

    def test_argmax_entry_wins(self, embedder):
        store = EvidenceStore()
        store_answer(store, "capital city of France", "Paris", embedder)
        store_answer(store, "who directed the film parasite", "Bong Joon-ho", embedder)
        assert lookup(store, "who directed film parasite", 0.85, embedder) == "Bong Joon-ho"

    def test_hit_emits_trace_payload(self, embedder):
        store = EvidenceStore()
        store_answer(store, "q one", "a1", embedder)
        seen = {}
        lookup(store, "q one", 0.85, embedder, trace=seen.update)
        assert seen["answer"] == "a1"
        assert seen["similarity"] == pytest.approx(1.0)

    def test_tau_validation(self, embedder):
        with pytest.raises(ValueError):
            lookup(EvidenceStore(), "x", 0.0, embedder)

    def test_agrees_with_brute_force_oracle(self, embedder):
        # Randomized stores checked against an explicit max-cosine scan.
        import random

        rng = random.Random(42)
        vocab = "alpha beta gamma delta epsilon zeta eta theta iota kappa".split()
        for trial in range(30):
            store = EvidenceStore()
            texts = []
            for i in range(rng.randrange(1, 12)):
                text = " ".join(rng.choices(vocab, k=rng.randrange(2, 7)))
                texts.append(text)
                store_answer(store, text, f"answer{i}", embedder)
            probe = " ".join(rng.choices(vocab, k=rng.randrange(2, 7)))
            probe_vec = embedder.embed(probe)
            sims = [float(np.dot(probe_vec, embedder.embed(t))) for t in texts]
            best = max(range(len(sims)), key=lambda i: (sims[i], -i))
            expected = f"answer{best}" if sims[best] >= 0.85 else None
            assert lookup(store, probe, 0.85, embedder) == expected, trial


class TestStoreAndClear:
    def test_store_then_lookup(self, embedder):
        store = EvidenceStore()
        store_answer(store, "q", "a", embedder)
        assert lookup(store, "q", 0.85, embedder) == "a"

    def test_storing_refusal_is_permitted(self, embedder):
        store = EvidenceStore()
        store_answer(store, "q", "Not found in the documents", embedder)
        assert lookup(store, "q", 0.85, embedder) == "Not found in the documents"

    def test_clear_then_miss(self, embedder):
        store = EvidenceStore()
        store_answer(store, "q", "a", embedder)
        clear(store)
        assert lookup(store, "q", 0.85, embedder) is None
        clear(store)  # idempotent
        assert len(store) == 0

    def test_export_and_reload(self, embedder, tmp_path):
        store = EvidenceStore()
        store_answer(store, "q1", "a1", embedder)
        store_answer(store, "q2", "a2", embedder)
        path = tmp_path / "cache.jsonl"
        store.export_jsonl(str(path))
        fresh = EvidenceStore()
        fresh.load_jsonl(str(path), embedder)
        assert lookup(fresh, "q2", 0.85, embedder) == "a2"


class TestRejectionPatterns:
    @pytest.mark.parametrize(
        "answer,expected",
        [
            ("Not found in the documents", True),
            ("NOT FOUND IN THE DOCUMENTS.", True),
            ("Cannot answer from provided documents", True),
            ("", True),
            ("   ", True),
            ("Bong Joon-ho", False),
        ],
    )
    def test_matching(self, answer, expected):
        assert is_rejected_answer(answer) is expected


class TestCascadeGuard:
    def test_rejected_dependency(self):
        verdict = cascade_guard("Who is [ANSWER_0]'s spouse?", ["Not found in the documents"])
        assert verdict.status == GUARD_REWRITE_NEEDED
        assert verdict.offending_indices == [0]

    def test_no_refs_ok(self):
        verdict = cascade_guard("Who is X?", [])
        assert verdict.status == GUARD_OK
        assert verdict.offending_indices == []

    def test_unresolved_index(self):
        verdict = cascade_guard("Use [ANSWER_2]", ["a"])
        assert verdict.status == GUARD_REWRITE_NEEDED
        assert verdict.offending_indices == [2]

    def test_clean_dependency_ok(self):
        assert cascade_guard("Who directed [ANSWER_0]?", ["Parasite"]).status == GUARD_OK

    def test_offending_deduped(self):
        verdict = cascade_guard("[ANSWER_3] then [ANSWER_3]", [])
        assert verdict.offending_indices == [3]
