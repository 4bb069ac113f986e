"""Exception types shared across the package."""

from __future__ import annotations


class HopflowError(Exception):
    """Base class for all package errors."""


class FormatError(HopflowError):
    """A model output does not satisfy its document schema.

    ``reason`` names the first violated rule: one of ``missing_tag``,
    ``empty_subquestions``, ``malformed_nesting``, ``invalid_stage``.
    """

    def __init__(self, reason: str, detail: str = ""):
        self.reason = reason
        self.detail = detail
        super().__init__(f"{reason}: {detail}" if detail else reason)


class UnresolvedPlaceholder(HopflowError):
    """A subquestion references an answer index that does not exist yet."""

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"placeholder [ANSWER_{index}] has no answer")


class ParseError(HopflowError):
    """A data file (script, trace, dataset) failed to parse."""

    def __init__(self, path: str, line: int, message: str):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class TransportError(HopflowError):
    """HTTP backend failed after exhausting retries."""


class BackendMisconfigured(HopflowError):
    """No backend is configured for the requested role."""


class ScriptExhausted(HopflowError):
    """The scripted backend has no entry matching a request."""

    def __init__(self, role: str, ordinal: int):
        self.role = role
        self.ordinal = ordinal
        super().__init__(f"no script entry for role={role!r} at turn {ordinal}")


class EmptyCorpus(HopflowError):
    """An index was requested over zero passages."""


class DuplicateId(HopflowError):
    """Two corpus passages share an id."""

    def __init__(self, passage_id: str):
        self.passage_id = passage_id
        super().__init__(f"duplicate passage id {passage_id!r}")


class EmbedderFailure(HopflowError):
    """The embedder raised while encoding a passage."""

    def __init__(self, passage_id: str, cause: Exception):
        self.passage_id = passage_id
        super().__init__(f"embedding failed for passage {passage_id!r}: {cause}")


class ScorerFailure(HopflowError):
    """A pluggable cross scorer raised for a candidate."""

    def __init__(self, passage_id: str, cause: Exception):
        self.passage_id = passage_id
        super().__init__(f"cross scorer failed on passage {passage_id!r}: {cause}")


class GroupTooSmall(HopflowError):
    """Group normalization needs at least two samples."""


class LengthMismatch(HopflowError):
    """Advantage and log-probability vectors differ in length."""


class AlignmentError(HopflowError):
    """Predicted and gold audit sets are keyed differently."""


class MissingTeacherLabel(HopflowError):
    """A retained trace has an audit point without a teacher label."""

    def __init__(self, question_id: str, audit_index: int):
        self.question_id = question_id
        self.audit_index = audit_index
        super().__init__(
            f"question {question_id!r} audit point {audit_index} has no teacher label"
        )


class ConfigError(HopflowError):
    """A configuration file is missing or invalid."""


class PipelineError(HopflowError):
    """A question run aborted; wraps the failing stage."""

    def __init__(self, stage: str, message: str, cause: Exception | None = None):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {message}")
