"""Metrics against hand-counted values and an independent reference scorer."""

from __future__ import annotations

import random

import pytest

from hopflow.errors import AlignmentError, ParseError
from hopflow.evaluation import (
    exact_match,
    inspection_precision_recall,
    latency_breakdown,
    load_dataset,
    normalize_answer,
    retrieval_recall,
    token_f1,
)
from hopflow.trace import TrajectoryStore, load_trace

from .conftest import write_jsonl
from .reference_scorer import ref_exact_match, ref_token_f1

HAND_PAIRS = [
    ("The Godfather!", ["godfather"]),
    ("1969", ["1969"]),
    ("An  Apple a Day.", ["apple day"]),
    ("Diane Keaton", ["Eleanor Coppola"]),
    ("the 1969", ["1969"]),
    ("september 1969", ["1969"]),
    ("Bong Joon-ho", ["Bong Joonho"]),
    ("Parasite (2019)", ["Parasite"]),
    ("don't stop", ["dont stop"]),
    ("New York City", ["New York"]),
    ("", ["anything"]),
    ("anything", ["anything else entirely different"]),
    ("a the an", ["  "]),
    ("42 apples", ["42"]),
    ("Mount Everest, Nepal", ["Mount Everest"]),
    ("U.S.A.", ["USA"]),
    ("one two three", ["three two one"]),
    ("repeated repeated word", ["repeated word"]),
    ("The answer is Paris", ["Paris"]),
    ("Paris", ["paris, france"]),
    ("O'Brien", ["OBrien"]),
    ("  spaced   out  ", ["spaced out"]),
    ("semi;colon", ["semicolon"]),
    ("Not found in the documents", ["1969"]),
    ("An apple", ["apple", "An Apple!"]),
]


def generated_pairs(n: int, seed: int = 17):
    rng = random.Random(seed)
    vocab = ["alpha", "beta", "the", "gamma", "delta's", "42", "an", "x-ray", "zulu!", "omega"]
    pairs = []
    for _ in range(n):
        pred = " ".join(rng.choices(vocab, k=rng.randrange(0, 6)))
        golds = [" ".join(rng.choices(vocab, k=rng.randrange(1, 6))) for _ in range(rng.randrange(1, 3))]
        pairs.append((pred, golds))
    return pairs


FIXTURE_PAIRS = HAND_PAIRS + generated_pairs(25)


class TestNormalizeAnswer:
    def test_rules(self):
        assert normalize_answer("The Godfather!") == "godfather"
        assert normalize_answer("1969") == "1969"
        assert normalize_answer("An  Apple a Day.") == "apple day"

    def test_idempotent(self):
        for pred, golds in FIXTURE_PAIRS:
            for text in (pred, *golds):
                once = normalize_answer(text)
                assert normalize_answer(once) == once


class TestExactMatch:
    def test_basic(self):
        assert exact_match("1969", ["1969"]) == 1
        assert exact_match("Diane Keaton", ["Eleanor Coppola"]) == 0
        assert exact_match("the 1969", ["1969"]) == 1

    def test_em_implies_f1_one(self):
        for pred, golds in FIXTURE_PAIRS:
            if exact_match(pred, golds) == 1:
                assert token_f1(pred, golds) == pytest.approx(1.0)


class TestTokenF1:
    def test_exact_is_one(self):
        assert token_f1("1969", ["1969"]) == 1.0

    def test_partial_overlap(self):
        # P = 1/2, R = 1 -> F1 = 2/3.
        assert token_f1("september 1969", ["1969"]) == pytest.approx(2 / 3)

    def test_fifty_pair_oracle_agreement(self):
        assert len(FIXTURE_PAIRS) == 50
        for pred, golds in FIXTURE_PAIRS:
            assert exact_match(pred, golds) == ref_exact_match(pred, golds), (pred, golds)
            assert token_f1(pred, golds) == pytest.approx(
                ref_token_f1(pred, golds), abs=1e-12
            ), (pred, golds)

    def test_shuffle_invariance_of_aggregates(self):
        rng = random.Random(3)
        pairs = list(FIXTURE_PAIRS)
        em1 = sum(exact_match(p, g) for p, g in pairs) / len(pairs)
        f11 = sum(token_f1(p, g) for p, g in pairs) / len(pairs)
        rng.shuffle(pairs)
        em2 = sum(exact_match(p, g) for p, g in pairs) / len(pairs)
        f12 = sum(token_f1(p, g) for p, g in pairs) / len(pairs)
        assert em1 == em2
        assert f11 == pytest.approx(f12)


class TestRetrievalRecall:
    def test_all_and_none(self):
        value, n = retrieval_recall({"q": {"a", "b"}}, {"q": {"a", "b"}})
        assert (value, n) == (1.0, 1)
        value, _ = retrieval_recall({"q": set()}, {"q": {"a"}})
        assert value == 0.0

    def test_partial(self):
        value, _ = retrieval_recall({"q": {"a", "b", "x", "y"}}, {"q": {"a", "b", "c", "d"}})
        assert value == 0.5

    def test_unscored_excluded(self):
        value, n = retrieval_recall({"q1": {"a"}}, {"q1": {"a"}, "q2": set()})
        assert (value, n) == (1.0, 1)


AUDIT_FIXTURE = [
    # (key, gold, predicted)
    (("q1", 0, "context"), "none", "none"),
    (("q1", 1, "context"), "retrieval", "retrieval"),
    (("q1", 2, "context"), "retrieval", "subquestion"),
    (("q2", 0, "context"), "none", "retrieval"),
    (("q2", 1, "context"), "subquestion", "subquestion"),
    (("q2", 2, "reasoning"), "extraction", "none"),
    (("q3", 0, "reasoning"), "reasoning", "reasoning"),
    (("q3", 1, "reasoning"), "none", "none"),
    (("q3", 2, "reasoning"), "reasoning", "extraction"),
    (("q4", 0, "reasoning"), "extraction", "extraction"),
]


class TestInspectionMetrics:
    def test_perfect_predictions(self):
        gold = {key: g for key, g, _ in AUDIT_FIXTURE}
        metrics = inspection_precision_recall(gold, gold)
        assert metrics.precision == 1.0
        assert metrics.recall == 1.0

    def test_hand_counted_confusion(self):
        # Detections: 7 predicted non-none; 4 agree with gold; 7 true errors.
        gold = {key: g for key, g, _ in AUDIT_FIXTURE}
        predicted = {key: p for key, _, p in AUDIT_FIXTURE}
        metrics = inspection_precision_recall(predicted, gold)
        assert metrics.detections == 7
        assert metrics.correct_detections == 4
        assert metrics.true_errors == 7
        assert metrics.precision == pytest.approx(4 / 7)
        assert metrics.recall == pytest.approx(4 / 7)

    def test_zero_detection_convention(self):
        gold = {("q", 0, "context"): "retrieval"}
        predicted = {("q", 0, "context"): "none"}
        metrics = inspection_precision_recall(predicted, gold)
        assert metrics.precision == 1.0
        assert metrics.zero_detections
        assert metrics.recall == 0.0

    def test_alignment_error(self):
        with pytest.raises(AlignmentError):
            inspection_precision_recall({("a", 0, "context"): "none"}, {("b", 0, "context"): "none"})


class TestLatencyBreakdown:
    def test_single_event_duration(self, tmp_path):
        path = str(tmp_path / "t.jsonl")
        store = TrajectoryStore(path)
        store.append_event("q", "plan", {"duration_ms": 100})
        store.close()
        stats = latency_breakdown(load_trace(path))
        assert stats["plan"]["total_ms"] == 100
        assert stats["plan"]["count"] == 1

    def test_empty_trace(self):
        assert latency_breakdown([]) == {}

    def test_inter_event_delta_fallback(self, tmp_path):
        path = write_jsonl(
            tmp_path / "t.jsonl",
            [
                {"event_id": 1, "parent_id": None, "event_type": "plan", "ts_ms": 1000, "question_id": "q", "payload": {}},
                {"event_id": 2, "parent_id": None, "event_type": "solve", "ts_ms": 1250, "question_id": "q", "payload": {"duration_ms": 40}},
            ],
        )
        stats = latency_breakdown(load_trace(path))
        assert stats["plan"]["total_ms"] == 250
        assert stats["solve"]["total_ms"] == 40


class TestLoadDataset:
    def test_round_trip(self, tmp_path):
        path = write_jsonl(
            tmp_path / "d.jsonl",
            [
                {"id": "1", "question": "q?", "answer": "a", "answer_aliases": ["b"], "type": "bridge"},
                {"id": "2", "question": "r?", "answer": "c", "type": "comparison", "n_hops": 3,
                 "gold_support_ids": ["p1"]},
            ],
        )
        records = load_dataset(path)
        assert len(records) == 2
        assert records[0].golds() == ["a", "b"]
        assert records[0].type == "bridge"
        assert records[1].n_hops == 3
        assert records[1].answer_aliases == []

    def test_missing_answer(self, tmp_path):
        path = write_jsonl(tmp_path / "d.jsonl", [{"id": "1", "question": "q?"}])
        with pytest.raises(ParseError) as exc:
            load_dataset(path)
        assert exc.value.line == 1

    def test_empty_answer_rejected(self, tmp_path):
        path = write_jsonl(tmp_path / "d.jsonl", [{"id": "1", "question": "q?", "answer": ""}])
        with pytest.raises(ParseError):
            load_dataset(path)
