"""Prompt assembly and the table format shared by prompts and the mock reasoner."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

from ..corpus import LOG_TYPES, EnrichmentBundle, format_ts
from ..profile import CriteriaSet, ThreatActorProfile, render_guidances
from ..rules import ERROR_CODES, LogView
from .templates import (ENRICHMENT_DESCRIPTIONS, LOG_TYPE_DESCRIPTIONS, SYSTEM_PROMPT, USER_TEMPLATE)

CHARS_PER_TOKEN = 4
DEFAULT_TOKEN_BUDGET = 100_000
LOG_COLUMNS = ("ts", "ip", "operation", "resource", "result_code", "actor", "extra")
_SLOT = re.compile(r"\{[A-Z_]+\}")


class PromptError(ValueError):
    pass


class TokenBudgetExceeded(PromptError):
    def __init__(self, estimate: int, budget: int):
        self.estimate = estimate
        self.budget = budget
        super().__init__(f"prompt needs ~{estimate} tokens, budget is {budget}; lower target_k")


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_text: str
    token_estimate: int


def estimate_tokens(*texts: str) -> int:
    """Character heuristic: one token per four characters, rounded up."""
    return math.ceil(sum(len(t) for t in texts) / CHARS_PER_TOKEN)


def _cell(value) -> str:
    return str(value).replace("|", "/").replace("\n", " ").strip()


def render_table(title: str, columns, rows) -> str:
    lines = [f"## {title}", "| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    for row in rows:
        lines.append("| " + " | ".join(_cell(v) for v in row) + " |")
    return "\n".join(lines)


def parse_tables(text: str) -> dict:
    """Inverse of :func:`render_table` for every ``## title`` table in ``text``."""
    tables = {}
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        if line.startswith("## ") and i + 2 < len(lines) and lines[i + 1].lstrip().startswith("|") \
                and lines[i + 2].lstrip().startswith("|---"):
            title = line[3:].strip()
            header = [c.strip() for c in lines[i + 1].strip().strip("|").split("|")]
            rows = []
            i += 3
            while i < len(lines) and lines[i].lstrip().startswith("|"):
                cells = [c.strip() for c in lines[i].strip()[1:-1].split(" | ")]
                if len(cells) == len(header):
                    rows.append(dict(zip(header, cells)))
                i += 1
            tables[title] = rows
            continue
        i += 1
    return tables


def _fmt_extra(extra: dict) -> str:
    return "; ".join(f"{k}={v}" for k, v in sorted(extra.items()))


def render_logs(records) -> tuple[str, list]:
    by_type: dict = {}
    for rec in records:
        by_type.setdefault(rec.log_type, []).append(rec)
    present = [t for t in LOG_TYPES if t in by_type]
    blocks = []
    for log_type in present:
        rows = [(format_ts(r.ts), r.ip, r.operation, r.resource, r.result_code, r.actor, _fmt_extra(r.extra))
                for r in by_type[log_type]]
        blocks.append(render_table(f"{log_type} logs", LOG_COLUMNS, rows))
    return "\n\n".join(blocks), present


def _fmt_resources(resources) -> str:
    return "; ".join(f"{r.resource} ({r.sensitivity})" for r in resources)


def render_enrichment(enrichment: EnrichmentBundle, result_codes) -> tuple[str, list]:
    blocks, present = [], []
    if enrichment.is_empty:
        blocks.append("Enrichment data is unavailable for this application; treat any detail not present "
                      "in the logs as missing.")
    if enrichment.ip_details:
        present.append("ip_details")
        blocks.append(render_table(
            "IP Details", ("ip", "city", "isp", "is_proxy", "is_benign_known", "resources_accessed"),
            [(d.ip, d.city, d.isp, d.is_proxy, d.is_benign_known, _fmt_resources(d.resources_accessed))
             for d in enrichment.ip_details]))
    if enrichment.permissions:
        present.append("permissions")
        blocks.append(render_table("Permissions", ("resource", "privilege", "sensitive"),
                                   [(p.resource, p.privilege, p.sensitive) for p in enrichment.permissions]))
    if enrichment.credentials:
        present.append("credentials")
        blocks.append(render_table(
            "Credentials", ("credential_id", "created", "rotated", "expires"),
            [(c.credential_id, format_ts(c.created), format_ts(c.rotated) if c.rotated else "",
              format_ts(c.expires)) for c in enrichment.credentials]))
    if enrichment.alerts:
        present.append("alerts")
        blocks.append(render_table("Alerts", ("alert_id", "title", "severity"),
                                   [(a.alert_id, a.title, a.severity) for a in enrichment.alerts]))
    codes = sorted(set(result_codes))
    if codes:
        present.append("error_codes")
        blocks.append(render_table("Error Codes", ("code", "meaning"),
                                   [(c, ERROR_CODES.get(c, "No description available.")) for c in codes]))
    return "\n\n".join(blocks), present


def render_profile(profile: ThreatActorProfile) -> str:
    lines = [profile.description] if profile.description else []
    for stage in profile.stages:
        lines.append(f"- {stage.name}:")
        lines.extend(f"    - {ttp}" for ttp in stage.ttps)
    return "\n".join(lines)


def _indent(lines, pad: str = "    ") -> str:
    return "\n".join(pad + line for line in lines)


def build_prompts(profile: ThreatActorProfile, criteria: CriteriaSet, reduced, enrichment: EnrichmentBundle,
                  config=None) -> PromptBundle:
    records = reduced.records
    if not records:
        raise PromptError("reduced segment has no records")
    guidances = render_guidances(criteria)
    logs_text, log_types = render_logs(records)
    enrichment_text, enrichment_types = render_enrichment(enrichment, [r.result_code for r in records if r.result_code])
    input_data = "\n\n".join([
        "# Threat Actor Profile\n" + render_profile(profile),
        "# Application Logs\n" + logs_text,
        "# Enrichment Data\n" + enrichment_text,
    ])
    enrichment_list = [f"- {ENRICHMENT_DESCRIPTIONS[t]}" for t in enrichment_types] or \
                      ["- None available for this application."]
    user = (USER_TEMPLATE
            .replace("{LOG_TYPES}", _indent(f"- {LOG_TYPE_DESCRIPTIONS[t]}" for t in log_types))
            .replace("{ENRICHMENT_DATA_TYPES}", _indent(enrichment_list))
            .replace("{GUIDANCES}", _indent(guidances)))
    # data goes in last so that braces inside log values are never taken for slots
    head, tail = user.split("{INPUT_DATA}")
    if _SLOT.search(head) or _SLOT.search(tail):
        raise PromptError("unresolved template slot")
    user = head + input_data + tail
    estimate = estimate_tokens(SYSTEM_PROMPT, user)
    budget = getattr(config, "token_budget", None) or DEFAULT_TOKEN_BUDGET
    if estimate > budget:
        raise TokenBudgetExceeded(estimate, budget)
    return PromptBundle(SYSTEM_PROMPT, user, estimate)


def _as_bool(text: str) -> bool:
    return text.strip().lower() == "true"


def _parse_resources(text: str) -> list:
    out = []
    for part in text.split(";"):
        m = re.match(r"\s*(.+?)\s*\((high|normal)\)\s*$", part)
        if m:
            out.append((m.group(1), m.group(2)))
    return out


def view_from_text(text: str, named_ips=None) -> LogView:
    """Rebuild a :class:`LogView` from rendered tables (what a reader of the prompt sees)."""
    tables = parse_tables(text)
    rows = []
    for title, table in tables.items():
        if not title.endswith(" logs"):
            continue
        log_type = title[: -len(" logs")]
        for r in table:
            rows.append({"ts": r.get("ts", ""), "log_type": log_type, "ip": r.get("ip", ""),
                         "operation": r.get("operation", ""), "resource": r.get("resource", ""),
                         "result_code": r.get("result_code", ""), "actor": r.get("actor", "")})
    rows.sort(key=lambda r: r["ts"])
    ip_info = {
        r["ip"]: {"is_proxy": _as_bool(r.get("is_proxy", "")),
                  "is_benign_known": _as_bool(r.get("is_benign_known", "")),
                  "resources": _parse_resources(r.get("resources_accessed", "")),
                  "isp": r.get("isp", ""), "city": r.get("city", "")}
        for r in tables.get("IP Details", [])
    }
    permissions = [{"resource": r["resource"], "privilege": r.get("privilege", ""),
                    "sensitive": _as_bool(r.get("sensitive", ""))} for r in tables.get("Permissions", [])]
    return LogView(rows, ip_info, permissions, named_ips)
