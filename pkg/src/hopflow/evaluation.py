"""Answer metrics, retrieval/inspection metrics, latency aggregation, dataset I/O.

The answer normalization here is the single normalization used system-wide:
the reward computations import it rather than reimplementing it.
"""

from __future__ import annotations

import json
import string
from collections import Counter
from dataclasses import dataclass, field

from .errors import AlignmentError, ParseError
from .trace import TraceEvent, events_by_question

_ARTICLES = {"a", "an", "the"}
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    """Lowercase, strip punctuation, drop articles, collapse whitespace."""
    text = text.lower().translate(_PUNCT_TABLE)
    tokens = [t for t in text.split() if t not in _ARTICLES]
    return " ".join(tokens)


def exact_match(pred: str, golds: list[str]) -> int:
    """1 iff the normalized prediction equals any normalized gold."""
    normalized = normalize_answer(pred)
    return int(any(normalized == normalize_answer(g) for g in golds))


def token_f1(pred: str, golds: list[str]) -> float:
    """Max token-overlap F1 over the golds, on normalized token multisets."""
    pred_tokens = normalize_answer(pred).split()
    best = 0.0
    for gold in golds:
        gold_tokens = normalize_answer(gold).split()
        if not pred_tokens and not gold_tokens:
            best = max(best, 1.0)
            continue
        if not pred_tokens or not gold_tokens:
            continue
        common = Counter(pred_tokens) & Counter(gold_tokens)
        overlap = sum(common.values())
        if overlap == 0:
            continue
        precision = overlap / len(pred_tokens)
        recall = overlap / len(gold_tokens)
        best = max(best, 2 * precision * recall / (precision + recall))
    return best


def retrieval_recall(
    retrieved_ids: dict[str, set[str]],
    gold_support_ids: dict[str, set[str]],
) -> tuple[float, int]:
    """Mean per-question |retrieved & gold| / |gold| over questions with gold.

    Questions without gold support ids are excluded; the second return value
    is how many questions were scored.
    """
    recalls = []
    for qid, gold in gold_support_ids.items():
        if not gold:
            continue
        got = retrieved_ids.get(qid, set())
        recalls.append(len(got & gold) / len(gold))
    if not recalls:
        return 0.0, 0
    return sum(recalls) / len(recalls), len(recalls)


@dataclass
class InspectionMetrics:
    precision: float
    recall: float
    detections: int
    true_errors: int
    correct_detections: int

    @property
    def zero_detections(self) -> bool:
        return self.detections == 0


def inspection_precision_recall(
    predicted_audits: dict[tuple, str],
    gold_audits: dict[tuple, str],
) -> InspectionMetrics:
    """Stage-level detection precision/recall over aligned audit points.

    Both inputs map an alignment key (question, step, phase) to a stage
    string. A detection is any predicted stage other than none; it counts as
    correct only when it equals the gold stage. With zero detections,
    precision is reported as 1.0 and flagged via ``zero_detections``.
    """
    if set(predicted_audits) != set(gold_audits):
        raise AlignmentError("predicted and gold audits are keyed differently")
    detections = 0
    true_errors = 0
    correct = 0
    for key, predicted in predicted_audits.items():
        gold = gold_audits[key]
        if gold != "none":
            true_errors += 1
        if predicted != "none":
            detections += 1
            if predicted == gold:
                correct += 1
    precision = correct / detections if detections else 1.0
    recall = correct / true_errors if true_errors else 0.0
    return InspectionMetrics(
        precision=precision,
        recall=recall,
        detections=detections,
        true_errors=true_errors,
        correct_detections=correct,
    )


def latency_breakdown(events: list[TraceEvent]) -> dict[str, dict[str, float]]:
    """Aggregate per-event-type durations: {type: {total_ms, mean_ms, count}}.

    Durations come from the payload's ``duration_ms`` when recorded, else
    from the gap to the next event of the same question (0 for the last).
    """
    per_type: dict[str, list[float]] = {}
    for question_events in events_by_question(events).values():
        for i, event in enumerate(question_events):
            duration = event.payload.get("duration_ms")
            if duration is None:
                if i + 1 < len(question_events):
                    duration = question_events[i + 1].ts_ms - event.ts_ms
                else:
                    duration = 0
            per_type.setdefault(event.event_type, []).append(float(duration))
    return {
        event_type: {
            "total_ms": sum(values),
            "mean_ms": sum(values) / len(values),
            "count": len(values),
        }
        for event_type, values in per_type.items()
    }


@dataclass
class QARecord:
    id: str
    question: str
    answer: str
    answer_aliases: list[str] = field(default_factory=list)
    type: str = ""
    gold_support_ids: list[str] | None = None
    n_hops: int | None = None

    def golds(self) -> list[str]:
        return [self.answer, *self.answer_aliases]


def load_dataset(path: str) -> list[QARecord]:
    """Load QA records from JSONL; answers must be non-empty."""
    records: list[QARecord] = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                record = QARecord(
                    id=str(raw["id"]),
                    question=raw["question"],
                    answer=raw["answer"],
                    answer_aliases=list(raw.get("answer_aliases", [])),
                    type=raw.get("type", ""),
                    gold_support_ids=raw.get("gold_support_ids"),
                    n_hops=raw.get("n_hops"),
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(path, lineno, f"bad dataset record: {exc}") from exc
            if not isinstance(record.answer, str) or not record.answer:
                raise ParseError(path, lineno, "record needs a non-empty 'answer'")
            records.append(record)
    return records


@dataclass
class MetricReport:
    em: float
    f1: float
    n: int
    n_failed: int = 0
    retrieval_recall: float | None = None
    n_recall_scored: int = 0
    inspection_precision: float | None = None
    inspection_recall: float | None = None
    latency_ms_by_phase: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "em": self.em,
            "f1": self.f1,
            "n": self.n,
            "n_failed": self.n_failed,
            "retrieval_recall": self.retrieval_recall,
            "n_recall_scored": self.n_recall_scored,
            "inspection_precision": self.inspection_precision,
            "inspection_recall": self.inspection_recall,
            "latency_ms_by_phase": self.latency_ms_by_phase,
        }
