"""Second-pass verification of triage reports.

Codes are deterministic validators over a parsed report and the enrichment
tables; they only detect problems. Checks are natural-language review
instructions; when codes fire, a small review prompt quoting just the disputed
items and their evidence goes back to the reasoner, and only those verdict
lines are re-parsed.
"""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import yaml

from .corpus import EnrichmentBundle
from .profile import CriteriaSet
from .reasoner.backends import invoke
from .reasoner.prompts import PromptBundle, estimate_tokens, render_logs, render_table
from .reasoner.report import TriageReport, Verdict, parse_verdict_lines, split_sections
from .reasoner.templates import REVIEW_HEADER, REVIEW_SYSTEM_PROMPT
from .rules import SUCCESS_CODES

log = logging.getLogger(__name__)

DEFAULT_MAX_ROUNDS = 2
_MULTI = re.compile(r"more than one", re.I)
_BENIGN_IPS = re.compile(r"suspicious ip addresses are benign", re.I)

BUILTIN_CHECKS = (
    "Double-check whether each suspicious IP address is benign using the IP Details table "
    "(is_benign_known); an address is benign only when it is marked so.",
    "A statement about several kill-chain stages holds only when at least two stage statements are true.",
    "Name the sensitive resources the application can access when describing its behavior.",
)


class ReviewConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ReviewRule:
    id: str
    kind: str  # "check" | "code"
    description: str = ""
    pattern: Optional[str] = None  # code rules: regex that must occur in the report
    template: Optional[str] = None  # check rules: instruction added to review prompts

    def __post_init__(self):
        if self.kind not in ("check", "code"):
            raise ReviewConfigError(f"rule {self.id!r}: kind must be check or code")
        if self.kind == "code" and not self.pattern:
            raise ReviewConfigError(f"code rule {self.id!r} needs a pattern")
        if self.kind == "check" and not self.template:
            raise ReviewConfigError(f"check rule {self.id!r} needs a template")
        if self.pattern:
            try:
                re.compile(self.pattern)
            except re.error as exc:
                raise ReviewConfigError(f"rule {self.id!r}: bad pattern: {exc}") from exc


@dataclass(frozen=True)
class Violation:
    rule_id: str
    detail: str
    criteria: tuple = ()  # criterion ids in dispute
    restate_behavior: bool = False


@dataclass
class ReviewOutcome:
    violations: list  # found on the submitted report
    corrected_verdicts: dict  # criterion id -> Verdict
    review_invocations: int
    unresolved: bool = False
    remaining: list = field(default_factory=list)
    report: Optional[TriageReport] = None


def load_review_rules(path) -> tuple:
    """Read ``[{id, kind, description, pattern | template}]`` from YAML or JSON."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    rows = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if isinstance(rows, dict):
        rows = rows.get("rules")
    if not isinstance(rows, list):
        raise ReviewConfigError(f"{path}: expected a list of rules")
    rules, seen = [], set()
    for row in rows:
        try:
            rule = ReviewRule(str(row["id"]), str(row["kind"]), str(row.get("description", "")),
                              row.get("pattern"), row.get("template"))
        except (KeyError, TypeError) as exc:
            raise ReviewConfigError(f"{path}: malformed rule {row!r}") from exc
        if rule.id in seen:
            raise ReviewConfigError(f"{path}: duplicate rule id {rule.id!r}")
        seen.add(rule.id)
        rules.append(rule)
    return tuple(rules)


def _numbers(report: TriageReport, ids) -> str:
    return ", ".join(str(report.verdicts[i].number) for i in ids) or "none"


def _code_tags(report, enrichment, criteria) -> list:
    missing = [cid for cid, v in report.verdicts.items() if v.verdict is None]
    if not missing:
        return []
    return [Violation("tags", f"lines {_numbers(report, missing)} carry no [True]/[False] tag", tuple(missing))]


def _code_multi(report, enrichment, criteria) -> list:
    stage_ids = [c.id for c in criteria.criteria if c.source == "ta_profile"]
    true_stages = [i for i in stage_ids if report.verdicts[i].verdict]
    out = []
    for c in criteria.criteria:
        if c.source != "other" or not _MULTI.search(c.text):
            continue
        v = report.verdicts[c.id].verdict
        expected = len(true_stages) >= 2
        if v is not None and v != expected:
            out.append(Violation(
                "multi-stage",
                f"line {report.verdicts[c.id].number} is {v} but stage lines marked True are "
                f"[{_numbers(report, true_stages)}]", (c.id,)))
    return out


def _code_benign_ips(report, enrichment, criteria) -> list:
    named = report.named_ips()
    if not named:
        return []
    index = enrichment.ip_index()
    expected = all(ip in index and index[ip].is_benign_known for ip in named)
    out = []
    for c in criteria.criteria:
        if not _BENIGN_IPS.search(c.text):
            continue
        v = report.verdicts[c.id].verdict
        if v is not None and v != expected:
            flags = ", ".join(f"{ip}={'benign' if ip in index and index[ip].is_benign_known else 'not benign'}"
                              for ip in named)
            out.append(Violation("benign-ips", f"line {report.verdicts[c.id].number} is {v} but enrichment "
                                               f"says {flags}", (c.id,)))
    return out


def _code_sensitive_mention(report, enrichment, criteria) -> list:
    sensitive = [p.resource for p in enrichment.permissions if p.sensitive]
    if not sensitive:
        return []
    text = report.behavior_summary.lower()
    if any(name.lower() in text for name in sensitive):
        return []
    return [Violation("sensitive-mention", "behavior section names none of the sensitive resources: "
                      + ", ".join(sensitive), (), True)]


BUILTIN_CODES = (
    ("tags", _code_tags),
    ("multi-stage", _code_multi),
    ("benign-ips", _code_benign_ips),
    ("sensitive-mention", _code_sensitive_mention),
)


def run_codes(report: TriageReport, enrichment: EnrichmentBundle, criteria: CriteriaSet, rules=()) -> list:
    """All code violations, sorted by (rule id, detail) so rule order never matters."""
    found = []
    for _, code in BUILTIN_CODES:
        found.extend(code(report, enrichment, criteria))
    for rule in rules:
        if rule.kind == "code" and not re.search(rule.pattern, report.raw_response or "", re.I | re.M):
            found.append(Violation(rule.id, rule.description or f"pattern {rule.pattern!r} not found"))
    return sorted(found, key=lambda v: (v.rule_id, v.detail))


def _evidence_rows(records, enrichment: EnrichmentBundle) -> list:
    index = enrichment.ip_index()
    keep = []
    for r in records:
        benign = r.ip in index and index[r.ip].is_benign_known
        if r.ip and (not benign or r.result_code not in SUCCESS_CODES):
            keep.append(r)
    return keep


def build_review_prompt(report: TriageReport, violations, criteria: CriteriaSet, enrichment: EnrichmentBundle,
                        records=(), rules=()) -> PromptBundle:
    disputed = sorted({cid for v in violations for cid in v.criteria}, key=criteria.ids.index)
    out = [REVIEW_HEADER,
           "An earlier analysis of this application has the inconsistencies listed below. Re-examine only the "
           "disputed items and end each answered line with [True] or [False].", "", "## Issues"]
    out += [f"- {v.detail}" for v in violations]
    checks = list(BUILTIN_CHECKS) + [r.template for r in rules if r.kind == "check"]
    out += ["", "## Review Guidance"] + [f"- {c}" for c in checks]
    if disputed:
        out += ["", "## Disputed Items"]
        out += [f"{criteria.ids.index(cid) + 1}. {criteria[cid].text}" for cid in disputed]
    out += ["", "## Current Verdicts"]
    for i, c in enumerate(criteria.criteria, start=1):
        v = report.verdicts[c.id].verdict
        out.append(f"{i}. {c.text}" + ("" if v is None else f" [{v}]"))
    named = report.named_ips()
    if named:
        out += ["", "Suspicious IPs: " + ", ".join(named)]
    if any(v.restate_behavior for v in violations):
        out += ["", "## Behavior Restatement Requested",
                "Restate the high-level behavior of the application, naming the sensitive resources it can access."]
    rows = _evidence_rows(records, enrichment)
    ips = set(named) | {r.ip for r in rows}
    out += ["", "# Evidence"]
    if rows:
        out.append(render_logs(rows)[0])
    details = [d for d in enrichment.ip_details if d.ip in ips]
    if details:
        out.append(render_table(
            "IP Details", ("ip", "city", "isp", "is_proxy", "is_benign_known", "resources_accessed"),
            [(d.ip, d.city, d.isp, d.is_proxy, d.is_benign_known,
              "; ".join(f"{a.resource} ({a.sensitivity})" for a in d.resources_accessed)) for d in details]))
    if enrichment.permissions:
        out.append(render_table("Permissions", ("resource", "privilege", "sensitive"),
                                [(p.resource, p.privilege, p.sensitive) for p in enrichment.permissions]))
    user = "\n".join(out) + "\n"
    return PromptBundle(REVIEW_SYSTEM_PROMPT, user, estimate_tokens(REVIEW_SYSTEM_PROMPT, user))


def run_checks(report: TriageReport, violations, backend, *, criteria: CriteriaSet, enrichment: EnrichmentBundle,
               records=(), rules=(), seed: int = 0, audit_dir=None, audit_tag: Optional[str] = None) -> TriageReport:
    """One review round: ask about the disputed items only and merge the answers."""
    if not violations:
        return report
    prompts = build_review_prompt(report, violations, criteria, enrichment, records, rules)
    raw = invoke(backend, prompts, seed, audit_dir=audit_dir, audit_tag=audit_tag)
    disputed = sorted({cid for v in violations for cid in v.criteria}, key=criteria.ids.index)
    specs = [(cid, criteria[cid].text, criteria.ids.index(cid) + 1) for cid in disputed]
    sections = split_sections(raw)
    lines = sections.get("triage", raw.splitlines())
    answers = parse_verdict_lines(lines, specs)
    updates = {cid: Verdict(v.verdict, v.raw_line, report.verdicts[cid].number)
               for cid, v in answers.items() if v.verdict is not None}
    revised = report.with_verdicts(updates)
    behavior = "\n".join(sections.get("behavior", [])).strip()
    if behavior and any(v.restate_behavior for v in violations):
        revised = replace(revised, behavior_summary=behavior)
    return revised


def review(report: TriageReport, enrichment: EnrichmentBundle, criteria: CriteriaSet, backend, config=None, *,
           records=(), rules=(), seed: int = 0, audit_dir=None, audit_tag: str = "review") -> ReviewOutcome:
    """Codes, then up to ``max_review_rounds`` check rounds while codes still fire.

    When violations survive every round the original verdicts are kept
    (untagged ones read as False) and the outcome is flagged unresolved.
    """
    max_rounds = int(getattr(config, "max_review_rounds", DEFAULT_MAX_ROUNDS))
    force = bool(getattr(config, "force_review", False))
    first = run_codes(report, enrichment, criteria, rules)
    violations = list(first)
    current = report
    invocations = 0
    if force and not violations and max_rounds > 0:
        # an unconditional pass re-asks every criterion
        violations = [Violation("forced", "unconditional review pass", tuple(criteria.ids))]
    for rnd in range(max_rounds):
        if not violations:
            break
        current = run_checks(current, violations, backend, criteria=criteria, enrichment=enrichment,
                             records=records, rules=rules, seed=seed + rnd, audit_dir=audit_dir,
                             audit_tag=f"{audit_tag}-{rnd}")
        invocations += 1
        violations = run_codes(current, enrichment, criteria, rules)
    if violations:
        log.warning("review left %d violation(s) unresolved; keeping original verdicts", len(violations))
        kept = {cid: v if v.verdict is not None else Verdict(False, v.raw_line, v.number)
                for cid, v in report.verdicts.items()}
        return ReviewOutcome(first, kept, invocations, True, violations, report.with_verdicts(kept))
    return ReviewOutcome(first, dict(current.verdicts), invocations, False, [], current)
