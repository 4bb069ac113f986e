"""Stage-aware reward functions for planner, solver, and inspector outputs.

All three rewards are weighted sums of small 0/1 (or piecewise) components:
format validity is the schema indicator from the protocol parsers, answer
accuracy uses the shared normalization from the evaluation module, and the
inspector's length shaping prefers terse confirmations and moderately
detailed error explanations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import FormatError
from .evaluation import QARecord, exact_match
from .protocol import parse_audit, parse_plan, parse_solver_output, validate_format


class _PositiveWeights:
    def __post_init__(self):
        for name, value in vars(self).items():
            if value <= 0:
                raise ValueError(f"reward weight {name!r} must be > 0")


@dataclass(frozen=True)
class PlannerWeights(_PositiveWeights):
    fmt: float = 1.0
    count: float = 2.0
    judge: float = 0.5


@dataclass(frozen=True)
class SolverWeights(_PositiveWeights):
    fmt: float = 1.0
    acc: float = 1.0
    rel: float = 1.0


@dataclass(frozen=True)
class InspectorWeights(_PositiveWeights):
    fmt: float = 0.5
    detect: float = 2.0
    length: float = 0.5


@dataclass(frozen=True)
class RewardWeights:
    planner: PlannerWeights = field(default_factory=PlannerWeights)
    solver: SolverWeights = field(default_factory=SolverWeights)
    inspector: InspectorWeights = field(default_factory=InspectorWeights)


DEFAULT_WEIGHTS = RewardWeights()

#: Semantic criteria scored 0/1 by a judge model, in canonical order.
JUDGE_CRITERIA = (
    "qualifier preservation",
    "entity boxing",
    "disambiguation",
    "dependency logic",
)


@dataclass
class PlannerRewardBreakdown:
    r_fmt: int
    r_count: int
    judge: tuple[int, int, int, int]
    total: float


@dataclass
class SolverRewardBreakdown:
    r_fmt: int
    r_acc: int
    r_rel: float
    total: float


@dataclass
class InspectorRewardBreakdown:
    r_fmt: int
    r_detect: int
    r_length: float
    total: float


def planner_reward(
    plan_text: str,
    n_gold: int,
    judge_scores: tuple[int, int, int, int],
    weights: PlannerWeights = DEFAULT_WEIGHTS.planner,
) -> PlannerRewardBreakdown:
    """Score a plan: format validity, hop-count match, four judge criteria.

    An unparseable plan zeroes both the format and count components; the
    judge scores are supplied by the caller (a judge model elsewhere).
    """
    if n_gold < 1:
        raise ValueError("n_gold must be >= 1")
    judge = tuple(int(s) for s in judge_scores)
    if len(judge) != 4 or any(s not in (0, 1) for s in judge):
        raise ValueError("judge_scores must be four 0/1 values")
    r_fmt = int(validate_format(plan_text, "plan"))
    if r_fmt:
        n_pred = len(parse_plan(plan_text).subquestions)
        r_count = int(n_pred == n_gold)
    else:
        r_count = 0
    total = weights.fmt * r_fmt + weights.count * r_count + weights.judge * sum(judge)
    return PlannerRewardBreakdown(r_fmt=r_fmt, r_count=r_count, judge=judge, total=total)


def _sources_reward(cited: set[str], gold: set[str]) -> float:
    if cited == gold:
        return 1.0
    if cited & gold:
        return 0.5
    return 0.0


def solver_reward(
    solver_text: str,
    gold_answer: str,
    gold_aliases: list[str],
    gold_source_ids: set[str] | list[str],
    weights: SolverWeights = DEFAULT_WEIGHTS.solver,
) -> SolverRewardBreakdown:
    """Score a solver output: format, answer accuracy, citation faithfulness.

    Accuracy is exact match under the shared normalization against the gold
    answer or any alias. The citation component is 1.0 when the cited id set
    equals the gold set, 0.5 when they merely intersect, 0.0 otherwise;
    gold ids use the same ``Doc_<n>`` token form the parser emits.
    """
    if not gold_answer:
        raise ValueError("gold_answer must be non-empty")
    r_fmt = int(validate_format(solver_text, "solver"))
    if r_fmt:
        doc = parse_solver_output(solver_text)
        answer, cited = doc.answer, set(doc.sources)
    else:
        answer, cited = "", set()
    golds = [gold_answer, *gold_aliases]
    r_acc = exact_match(answer, golds)
    r_rel = _sources_reward(cited, set(gold_source_ids))
    total = weights.fmt * r_fmt + weights.acc * r_acc + weights.rel * r_rel
    return SolverRewardBreakdown(r_fmt=r_fmt, r_acc=r_acc, r_rel=r_rel, total=total)


def length_shaping(n_words: int, gold_stage: str) -> float:
    """Explanation-length reward.

    Clean verdicts (gold stage none) should be at most 3 words; error
    verdicts should land in [15, 50] words. Outside the target the reward
    decays linearly to zero over 10 (resp. 15) words.
    """
    if gold_stage == "none":
        if n_words <= 3:
            return 1.0
        return max(0.0, 1.0 - (n_words - 3) / 10.0)
    if 15 <= n_words <= 50:
        return 1.0
    distance = 15 - n_words if n_words < 15 else n_words - 50
    return max(0.0, 1.0 - distance / 15.0)


def inspector_reward(
    audit_text: str,
    phase: str,
    gold_stage: str,
    weights: InspectorWeights = DEFAULT_WEIGHTS.inspector,
) -> InspectorRewardBreakdown:
    """Score an audit: format, error-stage correctness, explanation length.

    ``gold_stage`` must be admissible for the phase. An unparseable audit
    zeroes every component.
    """
    try:
        reference = parse_audit(f"<error_stage>{gold_stage}</error_stage><explanation>x</explanation>", phase)
    except FormatError as exc:
        raise ValueError(f"gold stage {gold_stage!r} invalid for phase {phase!r}") from exc
    schema = "context_audit" if phase == "context" else "reasoning_audit"
    r_fmt = int(validate_format(audit_text, schema))
    if not r_fmt:
        return InspectorRewardBreakdown(r_fmt=0, r_detect=0, r_length=0.0, total=0.0)
    doc = parse_audit(audit_text, phase)
    r_detect = int(doc.error_stage == reference.error_stage)
    r_length = length_shaping(len(doc.explanation.split()), reference.error_stage)
    total = weights.fmt * r_fmt + weights.detect * r_detect + weights.length * r_length
    return InspectorRewardBreakdown(r_fmt=r_fmt, r_detect=r_detect, r_length=r_length, total=total)


def resolve_n_gold(record: QARecord) -> int | None:
    """Reference hop count for a record: n_hops, a digit in the type tag,
    or 2 for plain bridge/comparison questions; None when underivable."""
    if record.n_hops is not None:
        return int(record.n_hops)
    type_tag = (record.type or "").lower()
    for token in type_tag.replace("-", "_").split("_"):
        if token.endswith("hop") and token[:-3].isdigit():
            return int(token[:-3])
    if type_tag in ("bridge", "comparison"):
        return 2
    return None
