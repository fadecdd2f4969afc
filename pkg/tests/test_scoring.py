import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apptriage.profile import builtin_criteria
from apptriage.scoring import (PriorityScore, ScoringError, aggregate_segments, classify, majority_vote,
                               score_verdicts)

BASELINE = builtin_criteria("baseline")
FOCUSED = builtin_criteria("focused")


def verdicts(cs, true_positions):
    return {cid: (i + 1) in true_positions for i, cid in enumerate(cs.ids)}


def test_focused_all_positive():
    pos = {i + 1 for i, c in enumerate(FOCUSED.criteria) if c.delta > 0}
    assert len(pos) == 7
    assert score_verdicts(verdicts(FOCUSED, pos), FOCUSED).value == 8


def test_baseline_all_positive():
    pos = {i + 1 for i, c in enumerate(BASELINE.criteria) if c.delta > 0}
    assert score_verdicts(verdicts(BASELINE, pos), BASELINE).value == 11


def test_baseline_all_negative_clamped():
    score = score_verdicts(verdicts(BASELINE, {12, 13, 14, 15}), BASELINE)
    assert score.raw == -6
    assert score.value == 0


def test_baseline_worked_example():
    assert score_verdicts(verdicts(BASELINE, {1, 2, 3, 5, 6, 7, 9, 10, 11}), BASELINE).value == 9


def test_focused_mixed():
    # OAuth Abuse (+2), proxy (+1), all suspicious IPs benign (-2)
    assert score_verdicts(verdicts(FOCUSED, {2, 4, 10}), FOCUSED).value == 1


def test_breakdown_lists_every_criterion():
    score = score_verdicts(verdicts(BASELINE, {1}), BASELINE)
    assert [b[0] for b in score.breakdown] == BASELINE.ids
    assert score.breakdown[0] == (BASELINE.ids[0], True, 1)


def test_key_mismatch():
    v = verdicts(BASELINE, set())
    del v[BASELINE.ids[0]]
    with pytest.raises(ScoringError):
        score_verdicts(v, BASELINE)


@settings(max_examples=300, deadline=None)
@given(data=st.data(), name=st.sampled_from(["baseline", "focused"]))
def test_bounds_and_monotonicity(data, name):
    cs = builtin_criteria(name)
    bits = data.draw(st.lists(st.booleans(), min_size=len(cs), max_size=len(cs)))
    v = dict(zip(cs.ids, bits))
    base = score_verdicts(v, cs).value
    assert 0 <= base <= cs.max_score
    for c in cs.criteria:
        flipped = dict(v, **{c.id: True})
        after = score_verdicts(flipped, cs).value
        if c.delta > 0:
            assert after >= base
        else:
            assert after <= base


def _ps(value, seg=None):
    return PriorityScore(value, "baseline", (), seg)


def test_aggregate_examples():
    assert aggregate_segments([_ps(2, 0), _ps(9, 1)]).value == 9
    assert aggregate_segments([_ps(5, 0)]).value == 5
    first = _ps(4, 0)
    assert aggregate_segments([first, _ps(4, 1)]) is first


def test_aggregate_empty():
    with pytest.raises(ScoringError):
        aggregate_segments([])


@pytest.mark.parametrize("votes,expected", [([3, 3, 3, 4, 5], 3), ([3, 3, 4, 4, 5], 4), ([7], 7)])
def test_majority_vote_examples(votes, expected):
    assert majority_vote(votes) == expected


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 11), min_size=1, max_size=9), st.randoms())
def test_vote_permutation_invariance(votes, rnd):
    shuffled = votes[:]
    rnd.shuffle(shuffled)
    assert majority_vote(shuffled) == majority_vote(votes)


@given(st.integers(0, 11), st.integers(1, 9))
def test_vote_idempotent_on_constant(v, n):
    assert majority_vote([v] * n) == v


@settings(max_examples=300, deadline=None)
@given(st.lists(st.integers(0, 11), min_size=1, max_size=8))
def test_aggregate_dominates(values):
    best = aggregate_segments([_ps(v, i) for i, v in enumerate(values)])
    assert all(best.value >= v for v in values)
    assert best.segment_index == values.index(max(values))


@pytest.mark.parametrize("votes,threshold,decision", [
    ([3, 3, 3, 2, 4], 3, "malicious"), ([2, 2, 2, 2, 2], 3, "benign"), ([8, 8, 8, 8, 8], 5, "malicious")])
def test_classify(votes, threshold, decision):
    c = classify("app", votes, threshold)
    assert c.decision == decision
    assert c.score == majority_vote(votes)


def test_vote_random_brute_force():
    rng = random.Random(0)
    for _ in range(2000):
        votes = [rng.randint(0, 8) for _ in range(rng.randint(1, 7))]
        counts = {v: votes.count(v) for v in votes}
        top = max(counts.values())
        assert majority_vote(votes) == max(v for v, c in counts.items() if c == top)
