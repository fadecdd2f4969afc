"""Reasoner backends: a remote chat-completion endpoint and a rule-driven mock."""
from __future__ import annotations

import json
import logging
import os
import re
import time
from collections import Counter
from pathlib import Path
from typing import Optional, Protocol

import numpy as np
import requests

from ..profile import CriteriaSet, Criterion
from ..rules import RULES, judge, rule_for
from .prompts import PromptBundle, parse_tables, view_from_text
from .report import Activity, TriageReport, Verdict, render_report, render_verdict_line
from .templates import REVIEW_HEADER

log = logging.getLogger(__name__)


class ReasonerError(RuntimeError):
    pass


class EmptyResponseError(ReasonerError):
    pass


class ExhaustedRetriesError(ReasonerError):
    pass


class ReasonerBackend(Protocol):
    name: str
    kind: str  # "remote" | "mock"

    def complete(self, prompts: PromptBundle, seed: int) -> str: ...


def invoke(backend: ReasonerBackend, prompts: PromptBundle, seed: int = 0, *, audit_dir=None,
           audit_tag: Optional[str] = None) -> str:
    """Call ``backend`` once; persist the exchange under ``audit_dir`` when given."""
    text = backend.complete(prompts, seed)
    if audit_dir is not None:
        path = Path(audit_dir)
        path.mkdir(parents=True, exist_ok=True)
        tag = audit_tag or f"call-{seed}"
        (path / f"{tag}.json").write_text(json.dumps(
            {"backend": getattr(backend, "name", type(backend).__name__), "seed": seed,
             "system": prompts.system_text, "user": prompts.user_text, "response": text}, indent=2))
    if text is None or not str(text).strip():
        raise EmptyResponseError(f"{getattr(backend, 'name', 'reasoner')} returned an empty response")
    return str(text)


def _dig(payload, path: str):
    node = payload
    for part in path.split("."):
        if isinstance(node, list):
            node = node[int(part)]
        else:
            node = node[part]
    return node


class RemoteReasoner:
    """Chat-completion style HTTP backend.

    Sends ``{"messages": [...], "seed": n}`` and reads the reply at
    ``response_path``. 5xx, 429 and connection failures are retried with
    exponential backoff; other 4xx responses fail immediately.
    """

    name = "remote"
    kind = "remote"

    def __init__(self, endpoint: str, api_key: Optional[str] = None, *, model: Optional[str] = None,
                 response_path: str = "choices.0.message.content", temperature: float = 0.0,
                 timeout: float = 120.0, retries: int = 3, backoff: float = 1.0, session=None):
        if not endpoint:
            raise ValueError("reasoner endpoint is required")
        self.endpoint = endpoint
        self.api_key = api_key
        self.model = model
        self.response_path = response_path
        self.temperature = temperature
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.session = session or requests.Session()

    @classmethod
    def from_env(cls, **kwargs) -> "RemoteReasoner":
        endpoint = os.environ.get("REASONER_ENDPOINT")
        if not endpoint:
            raise ValueError("REASONER_ENDPOINT is not set")
        return cls(endpoint, os.environ.get("REASONER_API_KEY"), **kwargs)

    def _payload(self, prompts: PromptBundle, seed: int) -> dict:
        body = {"messages": [{"role": "system", "content": prompts.system_text},
                             {"role": "user", "content": prompts.user_text}],
                "temperature": self.temperature, "seed": int(seed)}
        if self.model:
            body["model"] = self.model
        return body

    def complete(self, prompts: PromptBundle, seed: int) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last = None
        for attempt in range(self.retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self.session.post(self.endpoint, json=self._payload(prompts, seed), headers=headers,
                                         timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last = exc
                log.warning("reasoner call failed (%s), attempt %d", exc, attempt + 1)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = ReasonerError(f"HTTP {resp.status_code}")
                log.warning("reasoner returned HTTP %d, attempt %d", resp.status_code, attempt + 1)
                continue
            if resp.status_code >= 400:
                raise ReasonerError(f"reasoner rejected the request: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                text = _dig(resp.json(), self.response_path)
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise ReasonerError(f"response has no value at {self.response_path!r}") from exc
            if text is None or not str(text).strip():
                raise EmptyResponseError("reasoner returned an empty response")
            return str(text)
        raise ExhaustedRetriesError(f"reasoner unavailable after {self.retries + 1} attempts: {last}")


# prompt structure the mock reads back

_NUMBERED = re.compile(r"^\s*(\d{1,3})\.\s+(.*?)\s*$")


def _guidance_block(text: str) -> list:
    """First contiguous run of numbered lines: the guidance list."""
    out = []
    for line in text.splitlines():
        m = _NUMBERED.match(line)
        if m:
            out.append(m.group(2))
        elif out:
            break
    return out


def _ad_hoc_criteria(texts) -> CriteriaSet:
    crits, seen = [], set()
    for t in texts:
        rule = rule_for(t)
        cid = re.sub(r"[^a-z0-9]+", "-", t.lower()).strip("-") or f"item-{len(crits)}"
        while cid in seen:
            cid += "-x"
        seen.add(cid)
        crits.append(Criterion(cid, "ta_profile" if rule and rule.kind == "stage" else "other", t, 1))
    return CriteriaSet("prompt", tuple(crits))


def _section_lines(text: str, heading: str) -> list:
    lines, inside = [], False
    for line in text.splitlines():
        if line.startswith("## ") or line.startswith("# "):
            inside = line.lstrip("# ").strip().lower() == heading.lower()
            continue
        if inside:
            lines.append(line)
    return lines


class MockReasoner:
    """Deterministic stand-in for an LLM, driven by the shared rule table.

    It reads the guidance list and the data tables back out of the prompt,
    judges each criterion honestly, then flips each verdict independently with
    probability ``noise`` (seeded per call). Review prompts are answered the
    same way for the disputed items only.
    """

    name = "mock"
    kind = "mock"

    def __init__(self, noise: float = 0.0, rules: Optional[dict] = None, omit_tags: float = 0.0):
        if not 0.0 <= noise < 1.0:
            raise ValueError("noise must lie in [0, 1)")
        self.noise = noise
        self.rules = rules if rules is not None else RULES
        self.omit_tags = omit_tags

    def _flip(self, verdicts: list, rng) -> list:
        if self.noise <= 0:
            return list(verdicts)
        flips = rng.random(len(verdicts)) < self.noise
        return [bool(v) != bool(f) for v, f in zip(verdicts, flips)]

    def complete(self, prompts: PromptBundle, seed: int) -> str:
        rng = np.random.default_rng(seed)
        if REVIEW_HEADER in prompts.user_text:
            return self._review(prompts.user_text, rng)
        return self._primary(prompts.user_text, rng)

    @staticmethod
    def _behavior(view) -> str:
        counts = Counter(r["log_type"] for r in view.rows)
        parts = ", ".join(f"{n} {t}" for t, n in sorted(counts.items()))
        ips = sorted({r["ip"] for r in view.rows if r["ip"]})
        sensitive = sorted(p["resource"] for p in view.permissions if p.get("sensitive"))
        text = f"The application produced {parts} records from {len(ips)} distinct IP addresses."
        if sensitive:
            text += " It holds sensitive permissions on " + ", ".join(sensitive) + "."
        return text

    def _activities(self, texts, view) -> tuple:
        acts, named = [], set()
        for t in texts:
            rule = rule_for(t)
            if not rule or rule.kind != "stage":
                continue
            rows = rule.detect(view)
            if not rows:
                continue
            ips = sorted({r["ip"] for r in rows})
            named.update(ips)
            ops = sorted({f"{r['operation']} on {r['resource']}" for r in rows})
            acts.append(Activity(rule.label, "; ".join(ops[:6]), ", ".join(ips),
                                 f"{rows[0]['ts']} to {rows[-1]['ts']}"))
        rest = [ip for ip in view.flagged_ips() if ip not in named]
        if rest:
            acts.append(Activity("Other observations", "Unusual or failed activity from these addresses",
                                 ", ".join(rest), ""))
        return tuple(acts)

    def _primary(self, text: str, rng) -> str:
        texts = _guidance_block(text)
        if not texts:
            raise ReasonerError("prompt has no guidance list")
        view = view_from_text(text)
        verdicts = self._flip(judge(texts, view), rng)
        criteria = _ad_hoc_criteria(texts)
        omit = rng.random(len(texts)) < self.omit_tags if self.omit_tags > 0 else np.zeros(len(texts), bool)
        report = TriageReport(
            behavior_summary=self._behavior(view), suspicious_activities=self._activities(texts, view),
            verdicts={c.id: Verdict(None if o else v, c.text, i)
                      for i, (c, v, o) in enumerate(zip(criteria.criteria, verdicts, omit), start=1)})
        return render_report(report, criteria)

    def _review(self, text: str, rng) -> str:
        disputed = []
        for line in _section_lines(text, "Disputed Items"):
            m = _NUMBERED.match(line)
            if m:
                disputed.append((int(m.group(1)), m.group(2)))
        current = {}
        for line in _section_lines(text, "Current Verdicts"):
            m = _NUMBERED.match(line)
            if m:
                tag = re.search(r"\[(True|False)\]\s*$", m.group(2))
                body = re.sub(r"\s*\[(True|False)\]\s*$", "", m.group(2))
                current[body] = tag is not None and tag.group(1) == "True"
        named = None
        for line in text.splitlines():
            if line.startswith("Suspicious IPs:"):
                named = [ip.strip() for ip in line.split(":", 1)[1].split(",") if ip.strip()]
        view = view_from_text(text, named_ips=named)
        answers = []
        for number, item in disputed:
            rule = rule_for(item)
            if rule is None:
                value = False
            elif rule.kind == "multi":
                value = sum(1 for t, v in current.items()
                            if v and (r := rule_for(t)) is not None and r.kind == "stage") >= 2
            else:
                value = rule.evaluate(view)
            answers.append((number, item, value))
        flipped = self._flip([a[2] for a in answers], rng)
        out = []
        if "## Behavior Restatement Requested" in text:
            tables = parse_tables(text)
            sensitive = [r["resource"] for r in tables.get("Permissions", []) if r.get("sensitive") == "True"]
            out += ["## High-level behavior of the application",
                    "The application holds sensitive permissions on " + ", ".join(sensitive) + "."
                    if sensitive else "The application holds no sensitive permissions.", ""]
        out.append("## Triage priority level of the application")
        out += [render_verdict_line(n, item, v) for (n, item, _), v in zip(answers, flipped)]
        return "\n".join(out) + "\n"
