"""Command-line entry point: ``apptriage {generate,analyze,evaluate,report}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import AnalysisConfig, ConfigError, load_config
from .corpus import CorpusError, load_labels
from .evaluation import EvaluationError, load_results, render_table, threshold_sweep
from .pipeline import EXIT_CONFIG, EXIT_OK, EXIT_PARTIAL, run_pipeline
from .simgen import generate_corpus

log = logging.getLogger("apptriage")


def _thresholds(text: str) -> tuple:
    try:
        values = tuple(int(t) for t in text.replace(",", " ").split())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"thresholds must be integers: {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("at least one threshold is required")
    return values


def _add_analysis_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML/JSON config file; flags override it")
    p.add_argument("--criteria", help="baseline, focused, or a criteria file path")
    p.add_argument("--runs", type=int)
    p.add_argument("--segment-cap", type=int)
    p.add_argument("--target-k", type=int)
    p.add_argument("--min-logs", type=int, dest="min_signin_count", help="minimum sign-in count for evaluation")
    p.add_argument("--thresholds", type=_thresholds, help="e.g. '3,4,5'")
    p.add_argument("--reasoner", choices=("mock", "remote"))
    p.add_argument("--noise", type=float, help="mock reasoner verdict flip probability")
    p.add_argument("--seed", type=int)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--review-rules", help="YAML/JSON file with extra review checks and codes")
    p.add_argument("--audit", help="directory for raw reasoner request/response pairs")


_CONFIG_KEYS = ("criteria", "runs", "segment_cap", "target_k", "min_signin_count", "thresholds", "reasoner",
                "noise", "seed", "parallelism", "review_rules", "audit")


def build_config(args) -> AnalysisConfig:
    base = load_config(args.config) if getattr(args, "config", None) else AnalysisConfig()
    return base.with_overrides(**{k: getattr(args, k, None) for k in _CONFIG_KEYS})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apptriage", description="Threat-actor-informed triage of applications.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a labelled synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--malicious", type=int, default=32)
    g.add_argument("--benign-ns", type=int, default=16, help="benign apps without suspicious behaviour")
    g.add_argument("--benign-s", type=int, default=45, help="benign apps with suspicious behaviour")
    g.add_argument("--seed", type=int, default=0)

    a = sub.add_parser("analyze", help="run the triage pipeline over a corpus")
    a.add_argument("--logs", required=True, help="corpus directory (apps/<app_id>/...)")
    a.add_argument("--profile", help="threat-actor profile YAML (default: <logs>/profile.yaml)")
    a.add_argument("--out", required=True)
    _add_analysis_flags(a)

    e = sub.add_parser("evaluate", help="recompute metrics from a classifications file")
    e.add_argument("--results", required=True, help="output directory of analyze")
    e.add_argument("--labels", required=True, help="labels.json")
    e.add_argument("--thresholds", type=_thresholds, default=(3, 4, 5))
    e.add_argument("--min-logs", type=int, default=5, dest="min_signin_count")

    r = sub.add_parser("report", help="print a summary of an analyze run")
    r.add_argument("--results", required=True)
    r.add_argument("--threshold", type=int, default=3)
    return parser


def _cmd_generate(args) -> int:
    bundles, labels = generate_corpus(args.malicious, args.benign_ns, args.benign_s, args.seed, out_dir=args.out)
    print(f"wrote {len(bundles)} apps to {args.out}")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    config = build_config(args)
    code, results = run_pipeline(config, args.logs, args.profile, args.out)
    if code == EXIT_CONFIG:
        return code
    failed = [r.app_id for r in results if r.status != "ok"]
    print(f"analysed {len(results)} apps, {len(failed)} failed; results in {args.out}")
    metrics = Path(args.out) / "metrics.txt"
    if metrics.exists():
        print(metrics.read_text(encoding="utf-8"), end="")
    elif code != EXIT_CONFIG:
        print("no labels found; evaluation skipped")
    return code


def _cmd_evaluate(args) -> int:
    results = Path(args.results)
    classifications = json.loads((results / "classifications.json").read_text(encoding="utf-8"))
    labels = {k: int(v) for k, v in load_labels(args.labels).items()}
    summary = threshold_sweep(load_results(classifications, labels), args.thresholds, args.min_signin_count)
    (results / "metrics.json").write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
    text = render_table(summary)
    (results / "metrics.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def _cmd_report(args) -> int:
    classifications = json.loads((Path(args.results) / "classifications.json").read_text(encoding="utf-8"))
    print(f"{'app_id':<12} {'status':<7} {'score':>5} {'votes':<18} decision@{args.threshold}")
    partial = False
    for app_id, rec in sorted(classifications.items()):
        if rec["status"] != "ok":
            partial = True
            print(f"{app_id:<12} {rec['status']:<7} {'-':>5} {'-':<18} {rec.get('error', '')}")
            continue
        decision = "malicious" if rec["score"] >= args.threshold else "benign"
        flag = "  (review unresolved)" if rec.get("review_unresolved") else ""
        print(f"{app_id:<12} {rec['status']:<7} {rec['score']:>5} {str(rec['votes']):<18} {decision}{flag}")
    return EXIT_PARTIAL if partial else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"generate": _cmd_generate, "analyze": _cmd_analyze, "evaluate": _cmd_evaluate,
                "report": _cmd_report}
    try:
        return handlers[args.command](args)
    except (ConfigError, CorpusError, EvaluationError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
