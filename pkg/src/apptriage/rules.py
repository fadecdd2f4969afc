"""Shared rule table: concrete log signatures per kill-chain stage.

The synthetic generator emits these signatures and the mock reasoner detects
them, so a noiseless mock run recovers exactly the stages a scenario enacted.
Detectors work on a :class:`LogView`, i.e. the rows and enrichment tables as
they appear in a rendered prompt.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .profile import slugify

SUCCESS_CODES = frozenset({"0", "200", "201", "204"})

RESOURCE_CATALOG = {
    "Microsoft Graph": "high",
    "Azure Key Vault": "high",
    "Azure SQL Database": "high",
    "Azure Storage": "normal",
    "Azure Data Explorer": "normal",
    "Azure Resource Manager": "normal",
    "Azure Monitor": "normal",
}
RESOURCE_LOG_TYPE = {
    "Microsoft Graph": "msgraph",
    "Azure Key Vault": "keyvault",
    "Azure Storage": "storage",
    "Azure Data Explorer": "kusto",
}

BENIGN_OPS = {
    "msgraph": ("Get group transitive members", "Check member groups", "Get servicePrincipal", "Get user"),
    "keyvault": ("SecretGet", "VaultGet"),
    "storage": ("GetBlob", "PutBlob"),
    "kusto": ("Query",),
}

EXECUTION_OPS = frozenset({"Update application", "Invoke directory action"})
PERSISTENCE_OPS = frozenset({"Add user", "Add service principal credentials"})
RECON_OPS = frozenset({"List users", "List groups"})
PRIV_ESC_OPS = frozenset({"Add app role assignment to service principal"})
COLLECTION_OPS = frozenset({"GetBlob", "ListBlobs"})

ERROR_CODES = {
    "0": "Success.",
    "200": "Request succeeded.",
    "201": "Resource created.",
    "204": "Request succeeded with no content.",
    "403": "Forbidden: caller lacks permission on the resource.",
    "404": "Resource not found.",
    "7000215": "Invalid client secret provided.",
    "7000222": "The provided client secret keys are expired.",
    "700016": "Application not found in the directory.",
    "50126": "Invalid credentials.",
    "ForkingIgnored": "Request slice intentionally not forwarded to a test endpoint; no security impact.",
}


@dataclass
class LogView:
    """What a reasoner can see: log rows plus ip/permission enrichment."""

    rows: list  # dicts with ts, log_type, ip, operation, resource, result_code
    ip_info: dict = field(default_factory=dict)  # ip -> {"is_proxy", "is_benign_known", "resources"}
    permissions: list = field(default_factory=list)  # dicts with resource, sensitive
    named_ips: Optional[list] = None

    def is_benign(self, ip: str) -> bool:
        return bool(self.ip_info.get(ip, {}).get("is_benign_known", False))

    def is_proxy(self, ip: str) -> bool:
        return bool(self.ip_info.get(ip, {}).get("is_proxy", False))

    def suspicious_rows(self, success: bool = True) -> list:
        return [r for r in self.rows
                if r["ip"] and not self.is_benign(r["ip"]) and (not success or ok(r))]

    def flagged_ips(self) -> list:
        """IPs worth naming: unknown/non-benign ones plus benign ones that produced failures."""
        if self.named_ips is not None:
            return sorted(set(self.named_ips))
        ips = set()
        for r in self.rows:
            if r["ip"] and (not self.is_benign(r["ip"]) or not ok(r)):
                ips.add(r["ip"])
        return sorted(ips)

    def has_sensitive_permission(self) -> bool:
        return any(p.get("sensitive") for p in self.permissions)

    def high_resources(self, ip: str) -> list:
        return [name for name, sens in self.ip_info.get(ip, {}).get("resources", []) if sens == "high"]


def ok(row: dict) -> bool:
    return row["result_code"] in SUCCESS_CODES


@dataclass(frozen=True)
class EventTemplate:
    """One signature event; ``resource`` may be a role resolved by the generator.

    Roles: ``@primary`` (a sensitive permitted resource), ``@unpermitted``
    (a resource outside the app's permissions), or a literal resource name.
    """

    log_type: str
    operation: str
    resource: str
    result_code: str = "0"
    min_count: int = 1


def _initial_access(v: LogView) -> list:
    permitted = {p["resource"] for p in v.permissions}
    return [r for r in v.suspicious_rows() if r["log_type"] == "signin" and r["resource"] in permitted]


def _any_signin(v: LogView) -> list:
    return [r for r in v.suspicious_rows() if r["log_type"] == "signin"]


def _ops(log_type: str, ops) -> Callable[[LogView], list]:
    def detect(v: LogView) -> list:
        return [r for r in v.suspicious_rows() if r["log_type"] == log_type and r["operation"] in ops]
    return detect


def _reconnaissance(v: LogView) -> list:
    return [r for r in v.suspicious_rows()
            if (r["log_type"] == "msgraph" and r["operation"] in RECON_OPS) or r["log_type"] == "kusto"]


def _defense_evasion(v: LogView) -> list:
    return [r for r in v.suspicious_rows() if v.is_proxy(r["ip"])]


def _credential_access(v: LogView) -> list:
    rows = [r for r in v.suspicious_rows() if r["log_type"] == "keyvault"]
    hits = []
    for i, r in enumerate(rows):
        if r["operation"] != "SecretList":
            continue
        gets = [g for g in rows[i + 1:] if g["operation"] == "SecretGet" and g["ip"] == r["ip"]]
        if gets:
            hits.append(r)
            hits.extend(g for g in gets if g not in hits)
    return hits


def _lateral_movement(v: LogView) -> list:
    permitted = {p["resource"] for p in v.permissions}
    return [r for r in v.suspicious_rows() if r["log_type"] == "signin" and r["resource"] not in permitted]


@dataclass(frozen=True)
class StageRule:
    stage: str
    events: tuple
    detect: Callable[[LogView], list]


STAGE_RULES = {
    "Initial Access": StageRule("Initial Access", (EventTemplate("signin", "Sign-in", "@primary"),), _initial_access),
    "Execution": StageRule(
        "Execution",
        (EventTemplate("msgraph", "Update application", "Microsoft Graph", "200"),
         EventTemplate("msgraph", "Invoke directory action", "Microsoft Graph", "200")),
        _ops("msgraph", EXECUTION_OPS)),
    "Persistence": StageRule(
        "Persistence",
        (EventTemplate("msgraph", "Add user", "Microsoft Graph", "201"),
         EventTemplate("msgraph", "Add service principal credentials", "Microsoft Graph", "200")),
        _ops("msgraph", PERSISTENCE_OPS)),
    "Reconnaissance": StageRule(
        "Reconnaissance",
        (EventTemplate("msgraph", "List users", "Microsoft Graph", "200"),
         EventTemplate("msgraph", "List groups", "Microsoft Graph", "200"),
         EventTemplate("kusto", "Query", "Azure Data Explorer", "0")),
        _reconnaissance),
    "Privilege Escalation": StageRule(
        "Privilege Escalation",
        (EventTemplate("msgraph", "Add app role assignment to service principal", "Microsoft Graph", "201"),),
        _ops("msgraph", PRIV_ESC_OPS)),
    # enacted by routing every attacker event through a proxy ip
    "Defense Evasion": StageRule("Defense Evasion", (), _defense_evasion),
    "Credential Access": StageRule(
        "Credential Access",
        (EventTemplate("keyvault", "SecretList", "Azure Key Vault", "200"),
         EventTemplate("keyvault", "SecretGet", "Azure Key Vault", "200")),
        _credential_access),
    "Lateral Movement": StageRule(
        "Lateral Movement", (EventTemplate("signin", "Sign-in", "@unpermitted"),), _lateral_movement),
    "Data Collection": StageRule(
        "Data Collection",
        (EventTemplate("storage", "ListBlobs", "Azure Storage", "200"),
         EventTemplate("storage", "GetBlob", "Azure Storage", "200", min_count=3)),
        _ops("storage", COLLECTION_OPS)),
}


def _any_of(*detectors):
    def detect(v: LogView) -> list:
        rows = []
        for d in detectors:
            rows.extend(r for r in d(v) if r not in rows)
        return rows
    return detect


@dataclass(frozen=True)
class Rule:
    """How the mock reasoner judges one criterion.

    ``kind`` is ``stage`` (evidence rows from a detector), ``multi`` (at least
    two stage-kind verdicts are true) or ``fact`` (a predicate over the view).
    """

    kind: str
    label: str
    detect: Optional[Callable[[LogView], list]] = None
    fact: Optional[Callable[[LogView], bool]] = None

    def evaluate(self, view: LogView, verdicts: Optional[dict] = None) -> bool:
        if self.kind == "stage":
            return bool(self.detect(view))
        if self.kind == "fact":
            return bool(self.fact(view))
        raise ValueError("multi rules are evaluated from other verdicts")


def _all_unsuccessful(v: LogView) -> bool:
    rows = v.suspicious_rows(success=False)
    return bool(rows) and not any(ok(r) for r in rows)


def _all_ips_benign(v: LogView) -> bool:
    ips = v.flagged_ips()
    return bool(ips) and all(v.is_benign(ip) for ip in ips)


def _ips_not_high(v: LogView) -> bool:
    ips = v.flagged_ips()
    return bool(ips) and not any(v.high_resources(ip) for ip in ips)


def _sensitive_pattern(v: LogView) -> bool:
    ips = {r["ip"] for r in v.suspicious_rows()}
    return any(v.high_resources(ip) for ip in ips)


def _stage(name: str) -> Rule:
    return Rule("stage", name, detect=STAGE_RULES[name].detect)


RULES: dict = {
    "initial-access-observed": _stage("Initial Access"),
    "execution-observed": _stage("Execution"),
    "persistence-observed": _stage("Persistence"),
    "reconnaissance-observed": _stage("Reconnaissance"),
    "privilege-escalation-observed": _stage("Privilege Escalation"),
    "defense-evasion-observed": _stage("Defense Evasion"),
    "credential-access-observed": _stage("Credential Access"),
    "lateral-movement-observed": _stage("Lateral Movement"),
    "data-collection-observed": _stage("Data Collection"),
    "unusual-access-attempt-observed": Rule("stage", "Unusual Access Attempt", detect=_any_signin),
    "oauth-abuse-observed": Rule(
        "stage", "OAuth Abuse",
        detect=_any_of(STAGE_RULES["Persistence"].detect, STAGE_RULES["Privilege Escalation"].detect)),
    "data-collection-activities-observed": Rule(
        "stage", "Data Collection Activities", detect=STAGE_RULES["Data Collection"].detect),
    "use-of-proxy-infrastructure-observed": Rule("stage", "Use of Proxy Infrastructure", detect=_defense_evasion),
    "more-than-one-stages-of-kill-chain-observed": Rule("multi", "Multiple stages"),
    "more-than-one-method-of-threat-actor-observed": Rule("multi", "Multiple methods"),
    "application-has-extensive-permissions-can-access-sensitive-resources": Rule(
        "fact", "Extensive permissions", fact=LogView.has_sensitive_permission),
    "application-lacks-access-sensitive-resources": Rule(
        "fact", "No sensitive access", fact=lambda v: not v.has_sensitive_permission()),
    "application-lacks-access-to-sensitive-resources": Rule(
        "fact", "No sensitive access", fact=lambda v: not v.has_sensitive_permission()),
    "all-access-attempts-were-unsuccessful-and-resulted-in-errors": Rule(
        "fact", "All attempts failed", fact=_all_unsuccessful),
    "all-the-suspicious-ip-addresses-are-benign": Rule("fact", "Suspicious IPs benign", fact=_all_ips_benign),
    "all-the-suspicious-ip-addresses-were-linked-to-resources-not-considered-high": Rule(
        "fact", "Suspicious IPs low value", fact=_ips_not_high),
    "a-suspicious-pattern-of-accessing-sensitive-resources-observed": Rule(
        "fact", "Sensitive access pattern", fact=_sensitive_pattern),
}


def rule_for(text_or_id: str) -> Optional[Rule]:
    return RULES.get(slugify(text_or_id))


def judge(criteria_texts: list, view: LogView) -> list:
    """Honest verdicts for the given criterion texts (unknown criteria are False)."""
    rules = [rule_for(t) for t in criteria_texts]
    verdicts = [bool(r and r.kind != "multi" and r.evaluate(view)) for r in rules]
    n_stage = sum(1 for r, v in zip(rules, verdicts) if r and r.kind == "stage" and v)
    return [n_stage >= 2 if r and r.kind == "multi" else v for r, v in zip(rules, verdicts)]
