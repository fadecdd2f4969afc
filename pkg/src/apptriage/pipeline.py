"""End-to-end analysis of a corpus: reduce, reason, review, score, classify, evaluate.

Every random choice is seeded from ``(master seed, app_id, run, segment)``, so
results do not depend on scheduling or on which other apps are present.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ._validation import derive_seed
from .config import AnalysisConfig, ConfigError
from .corpus import (ApplicationBundle, CorpusError, list_applications, load_application, load_labels,
                     segment_application)
from .embedding import HashingLogEmbedder, RemoteEmbeddingProvider
from .evaluation import EvaluationError, load_results, render_table, threshold_sweep
from .profile import CriteriaError, CriteriaSet, ProfileError, ThreatActorProfile, load_profile, resolve_criteria
from .reasoner import (MockReasoner, RemoteReasoner, ReportParseError, TokenBudgetExceeded, build_prompts, invoke,
                       parse_report, render_report)
from .reasoner.report import MissingVerdictTagError
from .reducer import ForestParams, reduce_segment
from .reviewer import load_review_rules, review
from .scoring import aggregate_segments, classify, majority_vote, score_verdicts

log = logging.getLogger(__name__)

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


class AppFailure(RuntimeError):
    pass


@dataclass
class AppAnalysis:
    app_id: str
    status: str  # "ok" | "failed"
    signin_count: int = 0
    label: Optional[int] = None
    score: Optional[int] = None
    votes: list = field(default_factory=list)
    segment_scores: list = field(default_factory=list)  # per run, per segment
    review_unresolved: bool = False
    review_invocations: int = 0
    n_segments: int = 0
    error: str = ""
    reports: list = field(default_factory=list)  # (run, segment, TriageReport, PriorityScore)
    traces: list = field(default_factory=list)

    def record(self, thresholds) -> dict:
        out = {"status": self.status, "signin_count": self.signin_count, "label": self.label}
        if self.status != "ok":
            out.update(score=None, error=self.error)
            return out
        out.update(score=self.score, votes=self.votes, segment_scores=self.segment_scores,
                   n_segments=self.n_segments, review_unresolved=self.review_unresolved,
                   review_invocations=self.review_invocations,
                   decisions={str(t): classify(self.app_id, self.votes, t).decision for t in thresholds})
        return out


def make_backend(config: AnalysisConfig):
    if config.reasoner == "mock":
        return MockReasoner(noise=config.noise)
    return RemoteReasoner.from_env()


def make_embedder(config: AnalysisConfig):
    if config.embedder == "hash":
        return HashingLogEmbedder(dim=config.embed_dim)
    return RemoteEmbeddingProvider.from_env(dim=config.embed_dim)


def _reduce_and_prompt(segment, bundle, profile, criteria, embedder, config):
    target_k = config.target_k
    params = ForestParams(config.n_trees, config.subsample_size, config.contamination,
                          derive_seed(config.seed, bundle.app_id, segment.index, "forest"))
    while True:
        reduced = reduce_segment(segment, embedder, target_k, params, config.metric)
        try:
            return reduced, build_prompts(profile, criteria, reduced, bundle.enrichment, config)
        except TokenBudgetExceeded as exc:
            if target_k == 1:
                raise AppFailure(f"segment {segment.index} exceeds the token budget even at target_k=1") from exc
            target_k = max(1, target_k // 2)
            log.info("%s segment %d: prompt over budget, retrying with target_k=%d",
                     bundle.app_id, segment.index, target_k)


def _reason(backend, prompts, criteria, seed, audit_dir, tag):
    """Invoke and parse; a missing tag goes on to review, other parse errors get one retry."""
    last = None
    for attempt in range(2):
        s = seed if attempt == 0 else derive_seed(seed, "retry")
        raw = invoke(backend, prompts, s, audit_dir=audit_dir, audit_tag=f"{tag}-a{attempt}")
        try:
            return parse_report(raw, criteria)
        except MissingVerdictTagError as exc:
            return exc.report
        except ReportParseError as exc:
            last = exc
            log.warning("%s: unparseable response (%s); %s", tag, exc, "retrying" if attempt == 0 else "giving up")
    raise AppFailure(f"{tag}: response could not be parsed: {last}")


def analyze_app(bundle: ApplicationBundle, profile: ThreatActorProfile, criteria: CriteriaSet, backend,
                config: AnalysisConfig, *, embedder=None, rules=(), audit_dir=None) -> AppAnalysis:
    label = None if bundle.label is None else int(bundle.label)
    result = AppAnalysis(bundle.app_id, "ok", bundle.signin_count, label)
    if not bundle.records:
        raise AppFailure("application has no log records")
    embedder = embedder or make_embedder(config)
    segments = segment_application(bundle.records, config.segment_cap)
    prepared = [_reduce_and_prompt(seg, bundle, profile, criteria, embedder, config) for seg in segments]
    result.n_segments = len(segments)
    result.traces = [reduced.method_trace for reduced, _ in prepared]
    audit = Path(audit_dir) / bundle.app_id if audit_dir else None
    for run in range(config.runs):
        seg_scores = []
        for seg, (reduced, prompts) in zip(segments, prepared):
            seed = derive_seed(config.seed, bundle.app_id, run, seg.index)
            tag = f"run{run}-seg{seg.index}"
            report = _reason(backend, prompts, criteria, seed, audit, tag)
            outcome = review(report, bundle.enrichment, criteria, backend, config, records=reduced.records,
                             rules=rules, seed=derive_seed(seed, "review"), audit_dir=audit, audit_tag=f"{tag}-review")
            result.review_invocations += outcome.review_invocations
            if outcome.unresolved:
                result.review_unresolved = True
                log.warning("%s %s: review unresolved, keeping original verdicts", bundle.app_id, tag)
            score = score_verdicts(outcome.corrected_verdicts, criteria, seg.index)
            seg_scores.append(score)
            result.reports.append((run, seg.index, outcome.report, score))
        result.segment_scores.append([s.value for s in seg_scores])
        result.votes.append(aggregate_segments(seg_scores).value)
    result.score = majority_vote(result.votes)
    return result


def _safe_analyze(app_id, corpus_dir, labels, profile, criteria, backend, config, embedder, rules, audit_dir):
    try:
        bundle = load_application(Path(corpus_dir) / "apps" / app_id, labels.get(app_id))
        return analyze_app(bundle, profile, criteria, backend, config, embedder=embedder, rules=rules,
                           audit_dir=audit_dir)
    except Exception as exc:  # per-app isolation: one bad app never stops the batch
        log.error("%s failed: %s", app_id, exc)
        label = labels.get(app_id)
        return AppAnalysis(app_id, "failed", label=None if label is None else int(label),
                           error=f"{type(exc).__name__}: {exc}")


def _dump(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_app_reports(result: AppAnalysis, criteria: CriteriaSet, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    md = [f"# {result.app_id}", ""]
    if result.status != "ok":
        md += [f"Analysis failed: {result.error}", ""]
    else:
        md += [f"Priority score: {result.score} (run scores {result.votes})", ""]
    sidecar = {"app_id": result.app_id, "status": result.status, "score": result.score, "votes": result.votes,
               "segment_traces": result.traces, "reports": []}
    for run, seg, report, score in result.reports:
        md += [f"## Run {run}, segment {seg} (score {score.value})", "", render_report(report, criteria)]
        sidecar["reports"].append({
            "run": run, "segment": seg, "score": score.value,
            "breakdown": [list(b) for b in score.breakdown],
            "verdicts": {cid: v.verdict for cid, v in report.verdicts.items()},
            "suspicious_activities": [vars(a) for a in report.suspicious_activities],
        })
    (out_dir / f"{result.app_id}.md").write_text("\n".join(md), encoding="utf-8")
    _dump(out_dir / f"{result.app_id}.json", sidecar)


def run_pipeline(config: AnalysisConfig, corpus_dir, profile_path=None, out_dir="results", *, backend=None,
                 embedder=None) -> tuple:
    """Analyse every app under ``corpus_dir``; returns ``(exit_code, results)``.

    Writes ``classifications.json``, per-app reports under ``reports/`` and,
    when ``labels.json`` exists, ``metrics.json`` and ``metrics.txt``.
    """
    corpus_dir, out_dir = Path(corpus_dir), Path(out_dir)
    try:
        profile = load_profile(profile_path or corpus_dir / "profile.yaml")
        criteria = resolve_criteria(config.criteria)
        rules = load_review_rules(config.review_rules) if config.review_rules else ()
        app_ids = list_applications(corpus_dir)
        labels_path = corpus_dir / "labels.json"
        labels = {k: int(v) for k, v in load_labels(labels_path).items()} if labels_path.exists() else {}
        backend = backend or make_backend(config)
        embedder = embedder or make_embedder(config)
    except (OSError, ConfigError, ProfileError, CriteriaError, CorpusError, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG, []
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(app_id):
        return _safe_analyze(app_id, corpus_dir, labels, profile, criteria, backend, config, embedder, rules,
                             config.audit)

    if config.parallelism > 1:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            results = list(pool.map(work, app_ids))
    else:
        results = [work(a) for a in app_ids]
    results.sort(key=lambda r: r.app_id)

    for r in results:
        write_app_reports(r, criteria, out_dir / "reports")
    classifications = {r.app_id: r.record(config.thresholds) for r in results}
    _dump(out_dir / "classifications.json", classifications)
    if labels:
        try:
            summary = threshold_sweep(load_results(classifications, labels), config.thresholds,
                                      config.min_signin_count)
            _dump(out_dir / "metrics.json", summary.to_dict())
            (out_dir / "metrics.txt").write_text(render_table(summary), encoding="utf-8")
        except EvaluationError as exc:
            log.warning("evaluation skipped: %s", exc)
    else:
        log.info("no labels.json in %s; evaluation skipped", corpus_dir)
    failed = [r.app_id for r in results if r.status != "ok"]
    return (EXIT_PARTIAL if failed else EXIT_OK), results
