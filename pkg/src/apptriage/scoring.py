"""Priority scores from verdicts, and their aggregation over segments and runs."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Optional

from .profile import CriteriaSet


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class PriorityScore:
    value: int
    set_name: str
    breakdown: tuple  # (criterion_id, verdict, delta_applied) for every criterion
    segment_index: Optional[int] = None

    @property
    def raw(self) -> int:
        return sum(d for _, _, d in self.breakdown)


@dataclass(frozen=True)
class Classification:
    app_id: str
    score: int
    threshold: int
    decision: str  # "malicious" | "benign"
    votes: tuple

    @property
    def is_malicious(self) -> bool:
        return self.decision == "malicious"


def _as_bool(v) -> bool:
    # report Verdict objects and plain booleans are both accepted
    return bool(getattr(v, "verdict", v))


def score_verdicts(verdicts: Mapping, criteria: CriteriaSet, segment_index: Optional[int] = None) -> PriorityScore:
    """Sum the deltas of True verdicts and clamp into ``[0, max_score]``."""
    if set(verdicts) != set(criteria.ids):
        missing = sorted(set(criteria.ids) - set(verdicts))
        extra = sorted(set(verdicts) - set(criteria.ids))
        raise ScoringError(f"verdict keys do not match criteria (missing {missing}, unexpected {extra})")
    breakdown = []
    for c in criteria.criteria:
        v = _as_bool(verdicts[c.id])
        breakdown.append((c.id, v, c.delta if v else 0))
    raw = sum(d for _, _, d in breakdown)
    value = min(max(raw, 0), criteria.max_score)
    return PriorityScore(value, criteria.name, tuple(breakdown), segment_index)


def aggregate_segments(scores) -> PriorityScore:
    """Highest score across segments; the earliest segment wins ties."""
    scores = list(scores)
    if not scores:
        raise ScoringError("no segment scores to aggregate")
    if len({s.set_name for s in scores}) > 1:
        raise ScoringError("segment scores come from different criteria sets")
    best = scores[0]
    for s in scores[1:]:
        if s.value > best.value:
            best = s
    return best


def majority_vote(run_scores) -> int:
    """Most frequent score; among equally frequent scores the largest wins."""
    run_scores = [int(s) for s in run_scores]
    if not run_scores:
        raise ScoringError("no run scores to vote on")
    counts = Counter(run_scores)
    top = max(counts.values())
    return max(v for v, n in counts.items() if n == top)


def classify(app_id: str, run_scores, threshold: int) -> Classification:
    if threshold < 0:
        raise ScoringError("threshold must be >= 0")
    score = majority_vote(run_scores)
    return Classification(app_id, score, int(threshold), "malicious" if score >= threshold else "benign",
                          tuple(int(s) for s in run_scores))
