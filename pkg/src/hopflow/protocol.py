"""Parsing, validation, and rendering of the XML-tagged agent message formats.

Every agent role emits a small tag-delimited document. Parsing is tolerant of
prose around the outermost tags (models emit preambles) and of tag-name case;
only the first complete block per tag is used. A failed parse is a signal the
pipeline and the reward functions must see, so nothing here repairs malformed
output.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import FormatError, UnresolvedPlaceholder

CONTEXT_STAGES = ("none", "subquestion", "retrieval")
REASONING_STAGES = ("none", "reasoning", "extraction")

PLACEHOLDER_RE = re.compile(r"\[ANSWER_(\d+)\]")
CITATION_RE = re.compile(r"\[Doc_(\d+)\]")
_NUMBERING_RE = re.compile(r"^\s*\d+\s*[.)]\s*")


@dataclass
class PlanDocument:
    """A planner decomposition: free-text reasoning plus ordered subquestions."""

    reasoning: str
    subquestions: list[str]


@dataclass
class SolverDocument:
    """A solver answer with its reasoning and deduplicated citation list."""

    reasoning: str
    sources: list[str]
    answer: str


@dataclass
class AuditDocument:
    """An inspector verdict: a discrete error stage plus an explanation."""

    phase: str  # "context" or "reasoning"
    error_stage: str
    explanation: str


@dataclass
class RewriteDocument:
    """A rewriter output: the rewritten subquestion or search query."""

    kind: str  # "subquestion" or "query"
    text: str


@dataclass
class PlaceholderRef:
    """A reference to a prior answer, extracted from an [ANSWER_N] token."""

    index: int


def _extract_block(text: str, tag: str) -> str:
    """Return the content of the first complete <tag>...</tag> block.

    Raises FormatError(missing_tag) when the open tag is absent and
    FormatError(malformed_nesting) when the block never closes or the close
    tag appears before any open tag.
    """
    open_re = re.compile(rf"<{tag}>", re.IGNORECASE)
    close_re = re.compile(rf"</{tag}>", re.IGNORECASE)
    open_m = open_re.search(text)
    if open_m is None:
        if close_re.search(text):
            raise FormatError("malformed_nesting", f"</{tag}> without <{tag}>")
        raise FormatError("missing_tag", f"<{tag}>")
    close_m = close_re.search(text, open_m.end())
    if close_m is None:
        raise FormatError("malformed_nesting", f"<{tag}> never closed")
    return text[open_m.end() : close_m.start()]


def _split_subquestions(block: str) -> list[str]:
    """Split a <subquestions> block into ordered subquestion strings.

    Accepts either one <subquestion> tag per item or a numbered/plain list,
    trimming leading "1." / "2)" style numbering and whitespace.
    """
    tagged = re.findall(r"<subquestion>(.*?)</subquestion>", block, re.IGNORECASE | re.DOTALL)
    if tagged:
        items = [t.strip() for t in tagged]
    else:
        items = [_NUMBERING_RE.sub("", line).strip() for line in block.splitlines()]
    return [item for item in items if item]


def _shift_one_indexed(text: str) -> str:
    """Rewrite 1-based [ANSWER_k] tokens to the canonical 0-based form."""

    def shift(m: re.Match) -> str:
        k = int(m.group(1))
        if k < 1:
            raise ValueError("[ANSWER_0] is invalid in one-indexed input")
        return f"[ANSWER_{k - 1}]"

    return PLACEHOLDER_RE.sub(shift, text)


def parse_plan(text: str, *, one_indexed: bool = False) -> PlanDocument:
    """Parse a planner completion into a PlanDocument.

    ``one_indexed`` is a compatibility switch for inputs that number answer
    placeholders from 1; when set, every [ANSWER_k] is normalized to
    [ANSWER_{k-1}]. The canonical convention is 0-based.
    """
    reasoning = _extract_block(text, "reasoning").strip()
    block = _extract_block(text, "subquestions")
    subquestions = _split_subquestions(block)
    if not subquestions:
        raise FormatError("empty_subquestions", "no subquestions parsed")
    if one_indexed:
        subquestions = [_shift_one_indexed(s) for s in subquestions]
    return PlanDocument(reasoning=reasoning, subquestions=subquestions)


def parse_solver_output(text: str) -> SolverDocument:
    """Parse a solver completion into reasoning, citations, and the answer.

    Citations are taken from [Doc_<digits>] tokens inside <sources> and
    deduplicated preserving first occurrence. An empty <answer> is returned
    as the empty string; the caller decides what that means.
    """
    reasoning = _extract_block(text, "reasoning").strip()
    sources_block = _extract_block(text, "sources")
    answer = _extract_block(text, "answer").strip()
    sources: list[str] = []
    for m in CITATION_RE.finditer(sources_block):
        token = f"Doc_{m.group(1)}"
        if token not in sources:
            sources.append(token)
    return SolverDocument(reasoning=reasoning, sources=sources, answer=answer)


def parse_audit(text: str, phase: str) -> AuditDocument:
    """Parse an inspector completion for the given phase.

    The stage token is matched case-insensitively against the phase's
    admissible set ({none, subquestion, retrieval} pre-solve; {none,
    reasoning, extraction} post-solve). A stage outside that set raises
    FormatError(invalid_stage).
    """
    if phase not in ("context", "reasoning"):
        raise ValueError(f"unknown audit phase {phase!r}")
    stage = _extract_block(text, "error_stage").strip().lower()
    explanation = _extract_block(text, "explanation").strip()
    admissible = CONTEXT_STAGES if phase == "context" else REASONING_STAGES
    if stage not in admissible:
        raise FormatError("invalid_stage", f"{stage!r} not in {admissible} for phase {phase}")
    return AuditDocument(phase=phase, error_stage=stage, explanation=explanation)


def parse_rewrite(text: str, kind: str) -> RewriteDocument:
    """Parse a rewriter completion carrying a <subquestion> or <query> tag."""
    if kind not in ("subquestion", "query"):
        raise ValueError(f"unknown rewrite kind {kind!r}")
    content = _extract_block(text, kind).strip()
    if not content:
        raise FormatError("missing_tag", f"<{kind}> is empty")
    return RewriteDocument(kind=kind, text=content)


def render_plan(doc: PlanDocument) -> str:
    lines = [f"{i + 1}. {s}" for i, s in enumerate(doc.subquestions)]
    return (
        f"<reasoning>{doc.reasoning}</reasoning>\n"
        f"<subquestions>\n" + "\n".join(lines) + "\n</subquestions>"
    )


def render_solver(doc: SolverDocument) -> str:
    cited = ", ".join(f"[{s}]" for s in doc.sources)
    return (
        f"<reasoning>{doc.reasoning}</reasoning>\n"
        f"<sources>{cited}</sources>\n"
        f"<answer>{doc.answer}</answer>"
    )


def render_audit(doc: AuditDocument) -> str:
    return (
        f"<error_stage>{doc.error_stage}</error_stage>\n"
        f"<explanation>{doc.explanation}</explanation>"
    )


def render_rewrite(doc: RewriteDocument) -> str:
    return f"<{doc.kind}>{doc.text}</{doc.kind}>"


#: schema_id -> callable(text) raising FormatError on violation
_SCHEMA_PARSERS = {
    "plan": parse_plan,
    "solver": parse_solver_output,
    "context_audit": lambda t: parse_audit(t, "context"),
    "reasoning_audit": lambda t: parse_audit(t, "reasoning"),
    "rewrite_subquestion": lambda t: parse_rewrite(t, "subquestion"),
    "rewrite_query": lambda t: parse_rewrite(t, "query"),
}

SCHEMA_IDS = tuple(_SCHEMA_PARSERS)


def validate_format(text: str, schema_id: str) -> bool:
    """Return True iff ``text`` parses under ``schema_id``.

    Total function; identical to the 0/1 format indicator used by the
    reward computations.
    """
    parser = _SCHEMA_PARSERS.get(schema_id)
    if parser is None:
        raise ValueError(f"unknown schema_id {schema_id!r}")
    try:
        parser(text)
    except FormatError:
        return False
    return True


def extract_placeholder_refs(subquestion: str) -> list[PlaceholderRef]:
    """Return [ANSWER_N] references in textual order, duplicates preserved."""
    return [PlaceholderRef(index=int(m.group(1))) for m in PLACEHOLDER_RE.finditer(subquestion)]


def render_placeholder(ref: PlaceholderRef) -> str:
    return f"[ANSWER_{ref.index}]"


def fill_placeholders(subquestion: str, answers: list[str]) -> str:
    """Substitute every [ANSWER_i] with answers[i].

    Unreferenced answers are ignored and no other text is altered. A
    reference past the end of ``answers`` raises UnresolvedPlaceholder;
    the cascade guard is expected to have intercepted that upstream.
    """

    def substitute(m: re.Match) -> str:
        i = int(m.group(1))
        if i >= len(answers):
            raise UnresolvedPlaceholder(i)
        return answers[i]

    return PLACEHOLDER_RE.sub(substitute, subquestion)
