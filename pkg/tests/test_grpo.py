"""Group normalization, loss arithmetic, and the gain-decomposition identity."""

from __future__ import annotations

import random
from fractions import Fraction

import pytest

from hopflow.errors import GroupTooSmall, LengthMismatch
from hopflow.grpo import GroupSample, gain_decomposition, grpo_loss, group_loss, normalize_group


def oracle_advantages(rewards, epsilon):
    """Straightforward two-pass mean/std recomputation."""
    n = len(rewards)
    mean = sum(rewards) / n
    std = (sum((r - mean) ** 2 for r in rewards) / n) ** 0.5
    return [(r - mean) / (std + epsilon) for r in rewards]


class TestNormalizeGroup:
    def test_constant_group_is_zero(self):
        assert normalize_group([4.0, 4.0, 4.0, 4.0]) == [0.0, 0.0, 0.0, 0.0]

    def test_two_point_symmetry(self):
        advantages = normalize_group([1.0, 3.0], epsilon=1e-12)
        assert advantages[0] == pytest.approx(-1.0, abs=1e-9)
        assert advantages[1] == pytest.approx(1.0, abs=1e-9)

    def test_matches_oracle_on_random_vectors(self):
        rng = random.Random(11)
        for _ in range(50):
            rewards = [rng.uniform(-5, 5) for _ in range(8)]
            got = normalize_group(rewards, epsilon=1e-6)
            want = oracle_advantages(rewards, 1e-6)
            assert max(abs(g - w) for g, w in zip(got, want)) <= 1e-12

    def test_group_too_small(self):
        with pytest.raises(GroupTooSmall):
            normalize_group([1.0])

    def test_epsilon_validation(self):
        with pytest.raises(ValueError):
            normalize_group([1.0, 2.0], epsilon=0.0)

    def test_shift_invariance(self):
        rng = random.Random(23)
        for _ in range(100):
            rewards = [rng.uniform(-10, 10) for _ in range(rng.randrange(2, 12))]
            shift = rng.uniform(-100, 100)
            base = normalize_group(rewards, 1e-6)
            shifted = normalize_group([r + shift for r in rewards], 1e-6)
            assert max(abs(a - b) for a, b in zip(base, shifted)) <= 1e-9


class TestGrpoLoss:
    def test_zero_advantages(self):
        assert grpo_loss([0.0, 0.0], [-3.0, -7.0]) == 0.0

    def test_hand_arithmetic(self):
        assert grpo_loss([1.0, -1.0], [-2.0, -4.0]) == pytest.approx(-2.0)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            grpo_loss([1.0], [-1.0, -2.0])

    def test_loss_invariant_to_reward_shift(self):
        rng = random.Random(31)
        for _ in range(50):
            k = rng.randrange(2, 10)
            rewards = [rng.uniform(0, 5) for _ in range(k)]
            logprobs = [rng.uniform(-20, -0.1) for _ in range(k)]
            base = grpo_loss(normalize_group(rewards, 1e-6), logprobs)
            shifted = grpo_loss(normalize_group([r + 10 for r in rewards], 1e-6), logprobs)
            assert abs(base - shifted) <= 1e-9

    def test_group_loss_composition(self):
        samples = [GroupSample(reward=1.0, sequence_logprob=-2.0),
                   GroupSample(reward=3.0, sequence_logprob=-4.0)]
        expected = grpo_loss(normalize_group([1.0, 3.0]), [-2.0, -4.0])
        assert group_loss(samples) == pytest.approx(expected)


class TestGainDecomposition:
    def test_identity_case(self):
        pairs = [(1, 1), (0, 0), (1, 1), (0, 0)]
        estimate = gain_decomposition(pairs)
        assert estimate.p_rec_given_fail == 0
        assert estimate.p_reg_given_success == 0
        assert estimate.predicted_success2 == estimate.observed_success2 == Fraction(1, 2)

    def test_hand_values(self):
        # 10 pairs: 5 baseline successes, of which 1 regresses; 5 failures,
        # of which 1 recovers. predicted = 0.5 + 0.5*0.2 - 0.5*0.2 = 0.5.
        pairs = [(1, 1)] * 4 + [(1, 0)] + [(0, 1)] + [(0, 0)] * 4
        estimate = gain_decomposition(pairs)
        assert estimate.p_success1 == Fraction(1, 2)
        assert estimate.p_rec_given_fail == Fraction(1, 5)
        assert estimate.p_reg_given_success == Fraction(1, 5)
        assert estimate.predicted_success2 == Fraction(1, 2)
        assert estimate.observed_success2 == Fraction(1, 2)

    def test_textbook_arithmetic(self):
        # p1=0.5, rec=0.2, reg=0.1 -> predicted 0.55, by direct evaluation.
        pairs = [(1, 1)] * 9 + [(1, 0)] * 1 + [(0, 1)] * 2 + [(0, 0)] * 8
        estimate = gain_decomposition(pairs)
        assert estimate.p_success1 == Fraction(1, 2)
        assert estimate.p_rec_given_fail == Fraction(1, 5)
        assert estimate.p_reg_given_success == Fraction(1, 10)
        assert estimate.predicted_success2 == Fraction(11, 20)

    def test_empirical_identity_random(self):
        rng = random.Random(77)
        for _ in range(200):
            pairs = [(rng.randrange(2), rng.randrange(2)) for _ in range(rng.randrange(1, 50))]
            estimate = gain_decomposition(pairs)
            # Exact rational identity, and a brute-force count agrees.
            assert estimate.predicted_success2 == estimate.observed_success2
            assert estimate.observed_success2 == Fraction(
                sum(s2 for _, s2 in pairs), len(pairs)
            )

    def test_degenerate_strata_flagged(self):
        estimate = gain_decomposition([(1, 1), (1, 0)])
        assert "no_baseline_failures" in estimate.degenerate_strata
        estimate = gain_decomposition([(0, 1), (0, 0)])
        assert "no_baseline_successes" in estimate.degenerate_strata

    def test_validation(self):
        with pytest.raises(ValueError):
            gain_decomposition([])
        with pytest.raises(ValueError):
            gain_decomposition([(2, 0)])
