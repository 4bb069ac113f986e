"""Append-only execution logging and trace loading.

Every pipeline action is recorded as one JSONL line and flushed immediately:
traces are the substrate for replay comparison, latency analysis, and
dataset mining, so losing tail events is worse than the write overhead.
Event ids increase monotonically per question; parent ids link repair
actions back to the inspection events that triggered them.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass

from .errors import ParseError

EVENT_TYPES = frozenset(
    {
        "plan",
        "retrieve",
        "inspect_context",
        "inspect_reason",
        "solve",
        "cache_hit",
        "retry",
        "error",
    }
)


@dataclass
class TraceEvent:
    event_id: int
    parent_id: int | None
    event_type: str
    ts_ms: int
    question_id: str
    payload: dict


class TrajectoryStore:
    """Writes TraceEvents to one JSONL file, serialized across threads."""

    def __init__(self, path: str):
        self.path = path
        self._file = open(path, "w", encoding="utf-8")
        self._lock = threading.Lock()
        self._next_id: dict[str, int] = {}
        self._last_ts: dict[str, int] = {}

    def append_event(
        self,
        question_id: str,
        event_type: str,
        payload: dict,
        parent_id: int | None = None,
    ) -> int:
        """Serialize one event and flush before returning its id."""
        if event_type not in EVENT_TYPES:
            raise ValueError(f"unknown event type {event_type!r}")
        with self._lock:
            event_id = self._next_id.get(question_id, 0) + 1
            self._next_id[question_id] = event_id
            ts_ms = time.time_ns() // 1_000_000
            # Wall clocks can step backwards; per-question timestamps may not.
            ts_ms = max(ts_ms, self._last_ts.get(question_id, 0))
            self._last_ts[question_id] = ts_ms
            record = {
                "event_id": event_id,
                "parent_id": parent_id,
                "event_type": event_type,
                "ts_ms": ts_ms,
                "question_id": question_id,
                "payload": payload,
            }
            self._file.write(json.dumps(record, sort_keys=True) + "\n")
            self._file.flush()
        return event_id

    def close(self) -> None:
        with self._lock:
            if not self._file.closed:
                self._file.close()

    def __enter__(self) -> "TrajectoryStore":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def load_trace(path: str) -> list[TraceEvent]:
    """Load and validate a trace file, preserving file order.

    Validates the closed event-type set and that ids increase and
    timestamps never decrease within a question. Raises ParseError with the
    offending line number.
    """
    events: list[TraceEvent] = []
    last_id: dict[str, int] = {}
    last_ts: dict[str, int] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                event = TraceEvent(
                    event_id=int(record["event_id"]),
                    parent_id=record.get("parent_id"),
                    event_type=record["event_type"],
                    ts_ms=int(record["ts_ms"]),
                    question_id=str(record["question_id"]),
                    payload=record["payload"],
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(path, lineno, f"bad trace event: {exc}") from exc
            if event.event_type not in EVENT_TYPES:
                raise ParseError(path, lineno, f"unknown event type {event.event_type!r}")
            if not isinstance(event.payload, dict):
                raise ParseError(path, lineno, "payload must be an object")
            qid = event.question_id
            if event.event_id <= last_id.get(qid, 0):
                raise ParseError(path, lineno, "event ids must increase within a question")
            if event.ts_ms < last_ts.get(qid, 0):
                raise ParseError(path, lineno, "timestamps must be non-decreasing within a question")
            last_id[qid] = event.event_id
            last_ts[qid] = event.ts_ms
            events.append(event)
    return events


def events_by_question(events: list[TraceEvent]) -> dict[str, list[TraceEvent]]:
    """Group events by question id, preserving order."""
    grouped: dict[str, list[TraceEvent]] = {}
    for event in events:
        grouped.setdefault(event.question_id, []).append(event)
    return grouped
