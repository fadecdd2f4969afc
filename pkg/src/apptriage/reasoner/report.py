"""Parsing and rendering of triage reports.

A report has three sections: a behaviour summary, the suspicious activities
grouped by stage, and the numbered triage list where every criterion line ends
in a ``[True]``/``[False]`` tag. Criterion lines are matched to the active
criteria set by token containment with a one-to-one assignment, so reworded
lines ("did not access" for "lacks access") still resolve.
"""
from __future__ import annotations

import ipaddress
import re
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from ..profile import CriteriaSet

MATCH_THRESHOLD = 0.6

SECTION_PATTERNS = {
    "behavior": re.compile(r"^high[\s-]*level\s+behaviou?r", re.I),
    "suspicious": re.compile(r"^suspicious\s+activit", re.I),
    "triage": re.compile(r"^triage\s+priority", re.I),
}
SECTION_TITLES = {
    "behavior": "High-level behavior of the application",
    "suspicious": "Suspicious activities and entities involved",
    "triage": "Triage priority level of the application",
}

_IP = re.compile(r"\b(?:\d{1,3}\.){3}\d{1,3}\b|\b[0-9a-f]{0,4}(?::[0-9a-f]{0,4}){2,7}\b", re.I)
_TAG = re.compile(r"\[\s*(true|false)\s*\]", re.I)
_NUMBERED = re.compile(r"^\s*(?:[-*]\s*)?(?:\*\*)?(\d{1,3})[.)]\s*(.*)$")
_STOPWORDS = frozenset(
    "a an the of is are was were be been and or to in on at by for with that this it its as from any all".split())


class ReportParseError(ValueError):
    pass


class MissingSectionError(ReportParseError):
    pass


class UnmatchedCriterionError(ReportParseError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__(f"no report line matches criteria: {', '.join(self.missing)}")


class MissingVerdictTagError(ReportParseError):
    """Some matched lines carry no tag; ``report`` holds the partial parse."""

    def __init__(self, report: "TriageReport", missing):
        self.report = report
        self.missing = list(missing)
        super().__init__(f"verdict tag missing for: {', '.join(self.missing)}")


@dataclass(frozen=True)
class Verdict:
    verdict: Optional[bool]
    raw_line: str
    number: Optional[int] = None


@dataclass(frozen=True)
class Activity:
    stage: str
    evidence: str = ""
    entities: str = ""
    dates: str = ""


@dataclass(frozen=True)
class TriageReport:
    behavior_summary: str
    suspicious_activities: tuple
    verdicts: dict  # criterion id -> Verdict, in criteria order
    raw_response: str = ""
    run_id: Optional[int] = None
    segment_index: Optional[int] = None

    def verdict_values(self) -> dict:
        return {cid: v.verdict for cid, v in self.verdicts.items()}

    def named_ips(self) -> list:
        found = set()
        for act in self.suspicious_activities:
            for cand in _IP.findall(act.entities):
                try:
                    found.add(str(ipaddress.ip_address(cand)))
                except ValueError:
                    pass
        return sorted(found)

    def with_verdicts(self, updates: dict) -> "TriageReport":
        merged = dict(self.verdicts)
        for cid, value in updates.items():
            old = merged[cid]
            merged[cid] = value if isinstance(value, Verdict) else Verdict(value, old.raw_line, old.number)
        return replace(self, verdicts=merged)


def _heading_text(line: str) -> str:
    s = line.strip()
    s = re.sub(r"^#{1,6}\s*", "", s)
    s = re.sub(r"^(?:\d+[.)]\s*)", "", s)
    return s.strip("*_ :").strip()


def _section_of(line: str) -> Optional[str]:
    s = line.strip()
    if not s or len(s) > 90:
        return None
    text = _heading_text(s)
    for name, pat in SECTION_PATTERNS.items():
        if pat.match(text):
            return name
    return None


def split_sections(raw: str) -> dict:
    """Map section name to its body lines; text before the first heading is dropped."""
    sections: dict = {}
    current = None
    for line in raw.splitlines():
        name = _section_of(line)
        if name is not None and name not in sections:
            current = name
            sections[name] = []
            continue
        if current is not None:
            sections[current].append(line)
    return sections


def _stem(tok: str) -> str:
    return tok[:-1] if len(tok) > 3 and tok.endswith("s") and not tok.endswith("ss") else tok


def tokens(text: str) -> set:
    text = _TAG.sub(" ", text.lower())
    return {_stem(t) for t in re.findall(r"[a-z0-9]+", text) if t not in _STOPWORDS}


def containment(criterion_text: str, line: str) -> float:
    crit = tokens(criterion_text)
    if not crit:
        return 0.0
    return len(crit & tokens(line)) / len(crit)


def extract_tag(line: str) -> Optional[bool]:
    found = _TAG.findall(line)
    if not found:
        return None
    return found[-1].lower() == "true"


def numbered_lines(lines) -> list:
    """``(number, text)`` for every numbered list item."""
    out = []
    for line in lines:
        m = _NUMBERED.match(line)
        if m:
            out.append((int(m.group(1)), line.strip()))
    return out


def match_lines(criteria, items, threshold: float = MATCH_THRESHOLD) -> dict:
    """Assign each criterion at most one numbered line, maximising total containment.

    ``criteria`` is a sequence of ``(id, text, position)``. A small bonus for the
    expected list position breaks ties between near-identical criteria.
    """
    criteria = list(criteria)
    if not criteria or not items:
        return {}
    score = np.zeros((len(criteria), len(items)))
    raw = np.zeros_like(score)
    for i, (_, text, pos) in enumerate(criteria):
        for j, (num, line) in enumerate(items):
            raw[i, j] = containment(text, line)
            score[i, j] = raw[i, j] + (0.01 if num == pos else 0.0)
    rows, cols = linear_sum_assignment(score, maximize=True)
    return {criteria[i][0]: items[j] for i, j in zip(rows, cols) if raw[i, j] >= threshold}


def parse_verdict_lines(lines, criteria, threshold: float = MATCH_THRESHOLD) -> dict:
    """Verdicts for ``(id, text, position)`` criteria found among ``lines``."""
    matched = match_lines(criteria, numbered_lines(lines), threshold)
    return {cid: Verdict(extract_tag(line), line, num) for cid, (num, line) in matched.items()}


def _parse_activities(lines) -> tuple:
    entries: list = []
    current: Optional[dict] = None
    for line in lines:
        s = line.strip()
        if not s:
            continue
        is_heading = s.startswith("#") or (s.startswith("**") and s.rstrip(":").endswith("**"))
        plain = s.replace("**", "").replace("`", "")
        if is_heading:
            current = {"stage": _heading_text(plain), "evidence": "", "entities": "", "dates": ""}
            entries.append(current)
            continue
        m = re.match(r"^[-*•]\s*(evidence|entities(?:\s+involved)?|dates?)\s*:\s*(.*)$", plain, re.I)
        if m and current is not None:
            key = m.group(1).lower()
            key = "entities" if key.startswith("entit") else "dates" if key.startswith("date") else "evidence"
            current[key] = (current[key] + " " + m.group(2)).strip()
    return tuple(Activity(**e) for e in entries)


def parse_report(raw: str, criteria: CriteriaSet, *, run_id=None, segment_index=None,
                 threshold: float = MATCH_THRESHOLD) -> TriageReport:
    """Parse a triage report for ``criteria``.

    Raises :class:`MissingSectionError` when any of the three sections is absent,
    :class:`UnmatchedCriterionError` when a criterion has no line, and
    :class:`MissingVerdictTagError` (carrying the partial report) when a
    matched line has no tag.
    """
    if not raw or not raw.strip():
        raise MissingSectionError("empty response")
    sections = split_sections(raw)
    for name in ("behavior", "suspicious", "triage"):
        if name not in sections:
            raise MissingSectionError(f"section not found: {SECTION_TITLES[name]}")
    specs = [(c.id, c.text, i) for i, c in enumerate(criteria.criteria, start=1)]
    found = parse_verdict_lines(sections["triage"], specs, threshold)
    missing = [cid for cid, _, _ in specs if cid not in found]
    if missing:
        raise UnmatchedCriterionError(missing)
    verdicts = {cid: found[cid] for cid, _, _ in specs}
    report = TriageReport(
        behavior_summary="\n".join(sections["behavior"]).strip(),
        suspicious_activities=_parse_activities(sections["suspicious"]),
        verdicts=verdicts, raw_response=raw, run_id=run_id, segment_index=segment_index)
    untagged = [cid for cid, v in verdicts.items() if v.verdict is None]
    if untagged:
        raise MissingVerdictTagError(report, untagged)
    return report


def render_verdict_line(number: int, text: str, value: Optional[bool]) -> str:
    tag = "" if value is None else f" [{value}]"
    return f"{number}. {text}{tag}"


def render_report(report: TriageReport, criteria: CriteriaSet) -> str:
    out = [f"## {SECTION_TITLES['behavior']}", report.behavior_summary or "No notable behaviour.", "",
           f"## {SECTION_TITLES['suspicious']}"]
    if not report.suspicious_activities:
        out.append("No suspicious activity found.")
    for act in report.suspicious_activities:
        out.append(f"**{act.stage}**")
        out.append(f"- Evidence: {act.evidence}")
        out.append(f"- Entities involved: {act.entities}")
        out.append(f"- Dates: {act.dates}")
    out += ["", f"## {SECTION_TITLES['triage']}"]
    for i, c in enumerate(criteria.criteria, start=1):
        out.append(render_verdict_line(i, c.text, report.verdicts[c.id].verdict))
    return "\n".join(out) + "\n"
