"""Threat-actor-informed triage of cloud applications from their sign-in logs."""
from .config import AnalysisConfig, ConfigError, load_config
from .corpus import ApplicationBundle, EnrichmentBundle, LogRecord, Segment, load_application, segment_application
from .embedding import HashingLogEmbedder, RemoteEmbeddingProvider
from .evaluation import threshold_sweep, weighted_metrics
from .pipeline import analyze_app, run_pipeline
from .profile import CriteriaSet, ThreatActorProfile, builtin_criteria, load_profile, parse_profile
from .reasoner import MockReasoner, RemoteReasoner, TriageReport, build_prompts, parse_report
from .reducer import IsolationForestScorer, MaxMinSampler, anomaly_scores, reduce_segment, subsample_maxmin
from .reviewer import review, run_codes
from .scoring import aggregate_segments, classify, majority_vote, score_verdicts
from .simgen import ScenarioSpec, generate_app, generate_corpus

__version__ = "0.1.0"

__all__ = [
    "AnalysisConfig", "ApplicationBundle", "ConfigError", "CriteriaSet", "EnrichmentBundle", "HashingLogEmbedder",
    "IsolationForestScorer", "LogRecord", "MaxMinSampler", "MockReasoner", "RemoteEmbeddingProvider",
    "RemoteReasoner", "ScenarioSpec", "Segment", "ThreatActorProfile", "TriageReport", "aggregate_segments",
    "analyze_app", "anomaly_scores", "build_prompts", "builtin_criteria", "classify", "generate_app",
    "generate_corpus", "load_application", "load_config", "load_profile", "majority_vote", "parse_profile",
    "parse_report", "reduce_segment", "review", "run_codes", "run_pipeline", "score_verdicts", "segment_application",
    "subsample_maxmin", "threshold_sweep", "weighted_metrics",
]
