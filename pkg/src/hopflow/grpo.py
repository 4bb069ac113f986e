"""Group-relative advantage normalization, the policy loss over supplied
log-probabilities, and the paired-run gain decomposition.

These are pure computations over data: sampling, tokenization, and gradient
machinery live outside this package. The gain decomposition uses exact
rational arithmetic so its bookkeeping identity (predicted second-system
success equals the observed rate) holds without float error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import sqrt
from typing import Iterable, Sequence

from .errors import GroupTooSmall, LengthMismatch


def normalize_group(rewards: Sequence[float], epsilon: float = 1e-6) -> list[float]:
    """Center and scale rewards within one sampling group.

    advantage_i = (R_i - mean) / (population_std + epsilon). A constant
    group yields all-zero advantages thanks to the epsilon guard.
    """
    k = len(rewards)
    if k < 2:
        raise GroupTooSmall(f"group size {k} < 2")
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    mean = sum(rewards) / k
    variance = sum((r - mean) ** 2 for r in rewards) / k
    scale = sqrt(variance) + epsilon
    return [(r - mean) / scale for r in rewards]


def grpo_loss(advantages: Sequence[float], logprobs: Sequence[float]) -> float:
    """Negative advantage-weighted sum of sequence log-probabilities."""
    if len(advantages) != len(logprobs):
        raise LengthMismatch(f"{len(advantages)} advantages vs {len(logprobs)} logprobs")
    return -sum(a * lp for a, lp in zip(advantages, logprobs))


@dataclass(frozen=True)
class GroupSample:
    """One sampled candidate: its scalar reward and sequence log-probability."""

    reward: float
    sequence_logprob: float


def group_loss(samples: Sequence[GroupSample], epsilon: float = 1e-6) -> float:
    """Convenience composition: normalize the group's rewards, then the loss."""
    advantages = normalize_group([s.reward for s in samples], epsilon)
    return grpo_loss(advantages, [s.sequence_logprob for s in samples])


@dataclass
class GainEstimate:
    """Decomposition of second-system success into baseline, recovery, regression.

    predicted_success2 = p_success1
                       + (1 - p_success1) * p_rec_given_fail
                       - p_success1 * p_reg_given_success
    computed exactly over counts; it equals observed_success2 identically.
    ``degenerate_strata`` flags empty conditioning strata (not fatal).
    """

    p_success1: Fraction
    p_rec_given_fail: Fraction
    p_reg_given_success: Fraction
    predicted_success2: Fraction
    observed_success2: Fraction
    degenerate_strata: list[str] = field(default_factory=list)


def gain_decomposition(paired_runs: Iterable[tuple[int, int]]) -> GainEstimate:
    """Estimate the gain terms from paired success indicators.

    Each element is (s1, s2): the same question's 0/1 success under the
    baseline system and under the audited system. Recovery is the fraction
    of baseline failures the second system fixes; regression is the fraction
    of baseline successes it breaks.
    """
    pairs = [(int(s1), int(s2)) for s1, s2 in paired_runs]
    if not pairs:
        raise ValueError("paired_runs must be non-empty")
    for s1, s2 in pairs:
        if s1 not in (0, 1) or s2 not in (0, 1):
            raise ValueError("success indicators must be 0 or 1")
    n = len(pairs)
    n_success1 = sum(s1 for s1, _ in pairs)
    n_fail1 = n - n_success1
    n_recovered = sum(1 for s1, s2 in pairs if s1 == 0 and s2 == 1)
    n_regressed = sum(1 for s1, s2 in pairs if s1 == 1 and s2 == 0)

    degenerate: list[str] = []
    p_success1 = Fraction(n_success1, n)
    if n_fail1 == 0:
        degenerate.append("no_baseline_failures")
        p_rec = Fraction(0)
    else:
        p_rec = Fraction(n_recovered, n_fail1)
    if n_success1 == 0:
        degenerate.append("no_baseline_successes")
        p_reg = Fraction(0)
    else:
        p_reg = Fraction(n_regressed, n_success1)

    predicted = p_success1 + (1 - p_success1) * p_rec - p_success1 * p_reg
    observed = Fraction(sum(s2 for _, s2 in pairs), n)
    return GainEstimate(
        p_success1=p_success1,
        p_rec_given_fail=p_rec,
        p_reg_given_success=p_reg,
        predicted_success2=predicted,
        observed_success2=observed,
        degenerate_strata=degenerate,
    )
