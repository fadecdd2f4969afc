"""Threat-actor profiles and the scored criteria sets used for triage."""
from __future__ import annotations

import json
import re
import textwrap
from dataclasses import dataclass
from pathlib import Path

import yaml

KILL_CHAIN_STAGES = (
    "Initial Access",
    "Execution",
    "Persistence",
    "Reconnaissance",
    "Privilege Escalation",
    "Defense Evasion",
    "Credential Access",
    "Lateral Movement",
    "Data Collection",
)


class ProfileError(ValueError):
    pass


class CriteriaError(ValueError):
    pass


@dataclass(frozen=True)
class Stage:
    name: str
    ttps: tuple = ()


@dataclass(frozen=True)
class ThreatActorProfile:
    stages: tuple
    description: str = ""

    def stage(self, name: str) -> Stage:
        for st in self.stages:
            if st.name == name:
                return st
        raise KeyError(name)


def _stage_list(block) -> list:
    if isinstance(block, str):
        # YAML forbids tab indentation; tabs only ever appear as leading layout here
        block = yaml.safe_load(block.expandtabs(8))
    if block is None:
        return []
    if not isinstance(block, list):
        raise ProfileError("profile must be a list of kill-chain stages")
    return block


def parse_profile(doc: str) -> ThreatActorProfile:
    """Parse a profile document: a ``profile`` key holding the staged bullet list.

    The list may be given inline or as a literal block string; an optional
    ``description`` key sits next to ``profile``.
    """
    try:
        data = yaml.safe_load(doc.expandtabs(8))
    except yaml.YAMLError as exc:
        raise ProfileError(f"profile document is not valid YAML: {exc}") from exc
    if not isinstance(data, dict) or "profile" not in data:
        raise ProfileError("missing top-level 'profile' key")
    try:
        entries = _stage_list(data["profile"])
    except yaml.YAMLError as exc:
        raise ProfileError(f"profile block is not a valid list: {exc}") from exc
    stages, seen = [], set()
    for entry in entries:
        if isinstance(entry, str):
            name, ttps = entry.rstrip(":").strip(), None
        elif isinstance(entry, dict) and len(entry) == 1:
            (name, ttps), = entry.items()
            name = str(name).strip()
        else:
            raise ProfileError(f"unrecognised stage entry: {entry!r}")
        if name in seen:
            raise ProfileError(f"duplicate stage: {name}")
        seen.add(name)
        if ttps is None:
            ttps = []
        if not isinstance(ttps, list):
            raise ProfileError(f"TTPs of stage {name!r} must be a list")
        stages.append(Stage(name, tuple(str(t).strip() for t in ttps)))
    return ThreatActorProfile(tuple(stages), str(data.get("description") or "").strip())


def serialize_profile(profile: ThreatActorProfile) -> str:
    # the inner block is itself YAML, so names and TTPs are quoted where needed
    block = yaml.safe_dump([{st.name: list(st.ttps) or None} for st in profile.stages], sort_keys=False,
                           allow_unicode=True, width=1000)
    block = block.replace(": null\n", ":\n")
    head = yaml.safe_dump({"description": profile.description}, allow_unicode=True, width=1000) \
        if profile.description else ""
    return head + "profile: |\n" + textwrap.indent(block, "  ")


def load_profile(path) -> ThreatActorProfile:
    return parse_profile(Path(path).read_text(encoding="utf-8"))


def slugify(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")


@dataclass(frozen=True)
class Criterion:
    id: str
    source: str  # "ta_profile" | "other"
    text: str
    delta: int

    def __post_init__(self):
        if not self.text.strip():
            raise CriteriaError("criterion text must be non-empty")
        if self.delta == 0:
            raise CriteriaError(f"criterion {self.id!r} has zero delta")
        if self.source not in ("ta_profile", "other"):
            raise CriteriaError(f"criterion {self.id!r} has unknown source {self.source!r}")


@dataclass(frozen=True)
class CriteriaSet:
    name: str
    criteria: tuple

    def __post_init__(self):
        if not self.criteria:
            raise CriteriaError("criteria set is empty")
        ids = [c.id for c in self.criteria]
        if len(set(ids)) != len(ids):
            raise CriteriaError("criterion ids must be unique")

    @property
    def max_score(self) -> int:
        return sum(c.delta for c in self.criteria if c.delta > 0)

    @property
    def min_score(self) -> int:
        return 0

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.criteria]

    def __len__(self):
        return len(self.criteria)

    def __getitem__(self, criterion_id: str) -> Criterion:
        for c in self.criteria:
            if c.id == criterion_id:
                return c
        raise KeyError(criterion_id)


def _make(rows, name) -> CriteriaSet:
    return CriteriaSet(name, tuple(Criterion(slugify(text), src, text, delta) for src, text, delta in rows))


_TA, _OTHER = "ta_profile", "other"

BASELINE_ROWS = [
    (_TA, "Initial Access observed", 1),
    (_TA, "Execution observed", 1),
    (_TA, "Persistence observed.", 1),
    (_TA, "Reconnaissance observed", 1),
    (_TA, "Privilege Escalation observed", 1),
    (_TA, "Defense Evasion observed", 1),
    (_TA, "Credential Access observed", 1),
    (_TA, "Lateral Movement observed", 1),
    (_TA, "Data Collection observed", 1),
    (_OTHER, "Application has extensive permissions, can access sensitive resources", 1),
    (_OTHER, "More than one stages of kill chain observed", 1),
    (_OTHER, "All access attempts were unsuccessful and resulted in errors", -1),
    (_OTHER, "Application lacks access sensitive resources", -1),
    (_OTHER, "All the suspicious IP addresses are benign", -3),
    (_OTHER, "All the suspicious IP addresses were linked to resources not considered high", -1),
]

FOCUSED_ROWS = [
    (_TA, "Unusual Access Attempt observed", 1),
    (_TA, "OAuth Abuse observed", 2),
    (_TA, "Data Collection Activities observed", 1),
    (_TA, "Use of Proxy Infrastructure observed", 1),
    (_OTHER, "Application has extensive permissions, can access sensitive resources", 1),
    (_OTHER, "More than one method of threat actor observed", 1),
    (_OTHER, "A suspicious pattern of accessing sensitive resources observed", 1),
    (_OTHER, "All access attempts were unsuccessful and resulted in errors", -1),
    (_OTHER, "Application lacks access to sensitive resources", -1),
    (_OTHER, "All the suspicious IP addresses are benign", -2),
    (_OTHER, "All the suspicious IP addresses were linked to resources not considered high", -1),
]


def builtin_criteria(name: str) -> CriteriaSet:
    if name == "baseline":
        return _make(BASELINE_ROWS, "baseline")
    if name == "focused":
        return _make(FOCUSED_ROWS, "focused")
    raise CriteriaError(f"unknown criteria set {name!r} (expected baseline or focused)")


def load_criteria_file(path) -> CriteriaSet:
    """Custom set from a YAML/JSON list of ``{id, source, text, delta}`` rows."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    rows = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    if isinstance(rows, dict):
        rows = rows.get("criteria")
    if not isinstance(rows, list):
        raise CriteriaError(f"{path}: expected a list of criteria")
    criteria = []
    for i, row in enumerate(rows, start=1):
        try:
            text_ = str(row["text"])
            criteria.append(Criterion(str(row.get("id") or slugify(text_)), str(row.get("source", _OTHER)),
                                      text_, int(row["delta"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise CriteriaError(f"{path}: row {i}: {exc}") from exc
    return CriteriaSet("custom", tuple(criteria))


def resolve_criteria(spec: str) -> CriteriaSet:
    if spec in ("baseline", "focused"):
        return builtin_criteria(spec)
    return load_criteria_file(spec)


def render_guidances(criteria: CriteriaSet) -> list[str]:
    return [f"{i}. {c.text}" for i, c in enumerate(criteria.criteria, start=1)]
