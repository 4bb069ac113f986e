"""Mining inspector training records from execution traces.

Only questions the pipeline actually solved (exact match against gold)
contribute: their traces are an empirical upper bound on what the frozen
planner/solver pair can do, so teacher audit labels over them supervise
auditing without entangling it with unrecoverable failures. Each inspection
event in a retained trace becomes one record pairing the trajectory-
augmented observation with the teacher's target.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import MissingTeacherLabel, ParseError
from .evaluation import exact_match
from .trace import TraceEvent

AUDIT_EVENT_TYPES = ("inspect_context", "inspect_reason")

#: Event payload fields that carry a step's (possibly superseding) answer.
_ANSWER_FIELDS = {
    "cache_hit": "answer",
    "solve": "answer",
    "error": "appended_answer",
}


def step_answers(events: list[TraceEvent]) -> dict[int, str]:
    """Reconstruct each step's final answer from one question's events.

    Within a step the latest answer-bearing event wins: the initial solve,
    any post-hoc re-solve, a retry record carrying the comparison's chosen
    answer, a cache hit, or the guard's appended rejection.
    """
    answers: dict[int, str] = {}
    for event in events:
        step = event.payload.get("step")
        if step is None:
            continue
        if event.event_type == "retry":
            value = event.payload.get("chosen_answer")
        else:
            value = event.payload.get(_ANSWER_FIELDS.get(event.event_type, ""))
        if value is not None:
            answers[int(step)] = value
    return answers


def final_answer(events: list[TraceEvent]) -> str:
    """The last step's answer, or empty when the trace never answered."""
    answers = step_answers(events)
    if not answers:
        return ""
    return answers[max(answers)]


@dataclass
class Stage2Record:
    """One inspector training pair: augmented observation plus audit target."""

    question_id: str
    question: str
    plan_text: str
    evidence_ids: list[str]
    solver_output: str
    audit_index: int
    phase: str
    target_stage: str
    target_action: str = ""
    target_explanation: str = ""

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "s_aug": {
                "question": self.question,
                "plan": self.plan_text,
                "evidence_ids": self.evidence_ids,
                "solver_output": self.solver_output,
            },
            "audit_index": self.audit_index,
            "phase": self.phase,
            "target": {
                "stage": self.target_stage,
                "action": self.target_action,
                "explanation": self.target_explanation,
            },
        }


@dataclass
class TeacherLabel:
    stage: str
    action: str = ""
    explanation: str = ""


def load_teacher_labels(path: str) -> dict[tuple[str, int], TeacherLabel]:
    """Load {"question_id", "audit_index", "stage"[, "action", "explanation"]} JSONL."""
    labels: dict[tuple[str, int], TeacherLabel] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                key = (str(raw["question_id"]), int(raw["audit_index"]))
                labels[key] = TeacherLabel(
                    stage=raw["stage"],
                    action=raw.get("action", ""),
                    explanation=raw.get("explanation", ""),
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(path, lineno, f"bad teacher label: {exc}") from exc
    return labels


def _question_context(events: list[TraceEvent]) -> tuple[str, str]:
    for event in events:
        if event.event_type == "plan":
            return event.payload.get("question", ""), event.payload.get("plan_text", "")
    return "", ""


def _last_solver_text(events: list[TraceEvent], step: int) -> str:
    text = ""
    for event in events:
        if event.event_type == "solve" and event.payload.get("step") == step:
            text = event.payload.get("solver_text", "")
    return text


def mine_stage2_dataset(
    traces: dict[str, list[TraceEvent]],
    golds: dict[str, list[str]],
    teacher_labels: dict[tuple[str, int], TeacherLabel],
) -> list[Stage2Record]:
    """Build the inspector training set from successful traces.

    A question is retained iff its trace's final answer exactly matches any
    of its golds (after normalization). Every audit point of a retained
    trace must have a teacher label; a missing one raises
    MissingTeacherLabel.
    """
    records: list[Stage2Record] = []
    for question_id in sorted(traces):
        events = traces[question_id]
        question_golds = golds.get(question_id)
        if not question_golds:
            continue
        if exact_match(final_answer(events), question_golds) != 1:
            continue
        question, plan_text = _question_context(events)
        audit_index = 0
        for event in events:
            if event.event_type not in AUDIT_EVENT_TYPES:
                continue
            label = teacher_labels.get((question_id, audit_index))
            if label is None:
                raise MissingTeacherLabel(question_id, audit_index)
            step = int(event.payload.get("step", 0))
            records.append(
                Stage2Record(
                    question_id=question_id,
                    question=question,
                    plan_text=plan_text,
                    evidence_ids=list(event.payload.get("doc_ids", [])),
                    solver_output=_last_solver_text(events, step),
                    audit_index=audit_index,
                    phase="context" if event.event_type == "inspect_context" else "reasoning",
                    target_stage=label.stage,
                    target_action=label.action,
                    target_explanation=label.explanation,
                )
            )
            audit_index += 1
    return records


def write_stage2_dataset(records: list[Stage2Record], path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
