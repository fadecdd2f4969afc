"""Support-weighted precision/recall/F1, threshold sweeps and per-category recall."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

MALICIOUS, BENIGN = "malicious", "benign"
LABELS = (MALICIOUS, BENIGN)


class EvaluationError(ValueError):
    pass


class UndefinedMetricWarning(UserWarning):
    pass


def _safe_div(num: float, den: float, what: str) -> float:
    if den == 0:
        warnings.warn(f"{what} is 0/0; defined as 0", UndefinedMetricWarning, stacklevel=3)
        return 0.0
    return num / den


def _label_metrics(labels: np.ndarray, preds: np.ndarray, label: str) -> dict:
    tp = float(np.sum((labels == label) & (preds == label)))
    fp = float(np.sum((labels != label) & (preds == label)))
    fn = float(np.sum((labels == label) & (preds != label)))
    p = _safe_div(tp, tp + fp, f"precision[{label}]")
    r = _safe_div(tp, tp + fn, f"recall[{label}]")
    f1 = _safe_div(2 * p * r, p + r, f"f1[{label}]")
    return {"precision": p, "recall": r, "f1": f1, "support": int(np.sum(labels == label))}


def weighted_metrics(labels, predictions) -> dict:
    """Per-label P/R/F1 (0/0 taken as 0) combined with weights equal to label support.

    F1 is computed per label first and then weighted, not recomputed from the
    weighted precision and recall.
    """
    labels = np.asarray(list(labels), dtype=object)
    preds = np.asarray(list(predictions), dtype=object)
    if labels.size != preds.size:
        raise EvaluationError(f"length mismatch: {labels.size} labels, {preds.size} predictions")
    if labels.size == 0:
        raise EvaluationError("no items to evaluate")
    for arr in (labels, preds):
        bad = set(arr.tolist()) - set(LABELS)
        if bad:
            raise EvaluationError(f"unknown labels: {sorted(map(str, bad))}")
    per_label = {lab: _label_metrics(labels, preds, lab) for lab in LABELS}
    total = labels.size
    out = {"per_label": per_label}
    for key in ("precision", "recall", "f1"):
        out[key] = sum(per_label[lab][key] * per_label[lab]["support"] for lab in LABELS) / total
    return out


@dataclass(frozen=True)
class AppResult:
    """What evaluation needs per app: its voted score, signin volume and category code."""

    app_id: str
    score: int
    signin_count: int
    category: int

    @property
    def truth(self) -> str:
        return MALICIOUS if self.category == 2 else BENIGN


@dataclass
class EvalSummary:
    per_threshold: dict
    averaged: dict
    filter: dict
    category_recall: dict
    n_apps: int
    excluded: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"per_threshold": {str(t): m for t, m in self.per_threshold.items()},
                "averaged": self.averaged, "filter": self.filter,
                "category_recall": {str(k): v for k, v in self.category_recall.items()},
                "n_apps": self.n_apps, "excluded": self.excluded}


def predict(score: int, threshold: int) -> str:
    return MALICIOUS if score >= threshold else BENIGN


def category_recall(apps, predictions, category: int) -> float:
    """Share of apps of one category whose prediction is the right one for it.

    For codes 0 and 1 "right" means predicted benign, for code 2 predicted malicious.
    """
    if category not in (0, 1, 2):
        raise EvaluationError(f"unknown category code {category}")
    pairs = [(a, p) for a, p in zip(apps, predictions) if a.category == category]
    if not pairs:
        raise EvaluationError(f"category {category} is absent from the data")
    want = MALICIOUS if category == 2 else BENIGN
    return sum(1 for _, p in pairs if p == want) / len(pairs)


def threshold_sweep(apps, thresholds, min_signin_count: int = 0,
                    category_threshold: Optional[int] = None) -> EvalSummary:
    """Metrics at every threshold on apps with ``signin_count >= min_signin_count``, plus their mean.

    Category recall is reported at ``category_threshold`` (default: the
    smallest threshold) for each category present.
    """
    thresholds = sorted({int(t) for t in thresholds})
    if not thresholds:
        raise EvaluationError("no thresholds given")
    apps = list(apps)
    kept = [a for a in apps if a.signin_count >= min_signin_count]
    excluded = sorted(a.app_id for a in apps if a.signin_count < min_signin_count)
    if not kept:
        raise EvaluationError(f"no apps left after the signin_count >= {min_signin_count} filter")
    truth = [a.truth for a in kept]
    per_threshold = {}
    for t in thresholds:
        per_threshold[t] = weighted_metrics(truth, [predict(a.score, t) for a in kept])
    averaged = {k: float(np.mean([per_threshold[t][k] for t in thresholds])) for k in ("precision", "recall", "f1")}
    ct = thresholds[0] if category_threshold is None else int(category_threshold)
    preds = [predict(a.score, ct) for a in kept]
    cats = sorted({a.category for a in kept})
    recall_by_cat = {c: category_recall(kept, preds, c) for c in cats}
    return EvalSummary(per_threshold, averaged, {"min_signin_count": min_signin_count, "category_threshold": ct},
                       recall_by_cat, len(kept), excluded)


def render_table(summary: EvalSummary) -> str:
    """Plain-text report: one block per threshold, then the mean and category recall."""
    lines = [f"apps evaluated: {summary.n_apps} (signin_count >= {summary.filter['min_signin_count']})", "",
             f"{'threshold':>9}  {'label':<9} {'precision':>9} {'recall':>7} {'f1':>7} {'support':>7}"]
    for t, m in summary.per_threshold.items():
        for lab in LABELS:
            pl = m["per_label"][lab]
            lines.append(f"{t:>9}  {lab:<9} {pl['precision']:>9.3f} {pl['recall']:>7.3f} {pl['f1']:>7.3f}"
                         f" {pl['support']:>7}")
        lines.append(f"{t:>9}  {'weighted':<9} {m['precision']:>9.3f} {m['recall']:>7.3f} {m['f1']:>7.3f}")
    a = summary.averaged
    lines += ["", f"mean over thresholds: precision {a['precision']:.3f}  recall {a['recall']:.3f}  f1 {a['f1']:.3f}"]
    names = {0: "benign-nonsuspicious", 1: "benign-suspicious", 2: "compromised"}
    for c, r in summary.category_recall.items():
        lines.append(f"recall[{names[c]}] @ {summary.filter['category_threshold']}: {r:.3f}")
    return "\n".join(lines) + "\n"


def load_results(classifications: Mapping, labels: Mapping) -> list:
    """Join a classifications mapping (app_id -> record) with category labels."""
    apps = []
    for app_id, rec in sorted(classifications.items()):
        if app_id not in labels or rec.get("score") is None:
            continue
        apps.append(AppResult(app_id, int(rec["score"]), int(rec.get("signin_count", 0)), int(labels[app_id])))
    return apps
