"""Labelled synthetic application corpora.

Benign traffic comes from a handful of known corporate addresses and touches
only permitted resources. Compromised apps additionally carry an attack burst
built from the signature events in :data:`rules.STAGE_RULES`; benign-suspicious
apps carry failed sign-ins, expired-credential errors or denied vault reads.
Everything is a pure function of the scenario seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from ._validation import derive_seed
from .corpus import (Alert, ApplicationBundle, Category, Credential, EnrichmentBundle, IpDetail, LogRecord,
                     Permission, ResourceAccess, write_application, write_labels)
from .profile import KILL_CHAIN_STAGES, Stage, ThreatActorProfile, serialize_profile
from .rules import BENIGN_OPS, RESOURCE_CATALOG, RESOURCE_LOG_TYPE, STAGE_RULES

DEFAULT_TEST_SEGMENT_CAP = 1000
SIGNIN_FRACTION = 0.6
WINDOW = timedelta(days=14)
EPOCH = datetime(2024, 5, 1, tzinfo=timezone.utc)

SUSPICIOUS_PATTERNS = ("expired_credential", "failed_signin", "vault_denied")
HIGH_RESOURCES = tuple(r for r, s in RESOURCE_CATALOG.items() if s == "high")
NORMAL_RESOURCES = tuple(r for r, s in RESOURCE_CATALOG.items() if s == "normal")
# failed sign-ins come through anonymizing proxies; denied vault reads from plain unknown hosts
FAILED_SIGNIN_IPS = ("192.0.2.1", "192.0.2.2", "192.0.2.3")
DENIED_VAULT_IPS = ("192.0.2.10", "192.0.2.11")
_CITIES = ("Seattle", "Dublin", "Amsterdam", "Singapore", "Toronto")
_OP_RESULT = {"msgraph": "200", "keyvault": "200", "storage": "200", "kusto": "0"}

DEFAULT_PROFILE = ThreatActorProfile(
    stages=(
        Stage("Initial Access", ("Sign-in to a sensitive resource from an unfamiliar address.",)),
        Stage("Execution", ("Graph API calls that modify applications or invoke directory actions.",)),
        Stage("Persistence", ("New users or new service principal credentials created in the tenant.",)),
        Stage("Reconnaissance", ("Enumeration of users and groups through Graph.", "Data Explorer (Kusto) queries.")),
        Stage("Privilege Escalation", ("App role assignments added to a service principal.",)),
        Stage("Defense Evasion", ("Traffic routed through anonymizing proxy services.",)),
        Stage("Credential Access", ("Key Vault secret listing followed by secret reads.",)),
        Stage("Lateral Movement", ("First sign-in to a resource outside the application's permissions.",)),
        Stage("Data Collection", ("Blob listing followed by bulk blob reads from storage.",)),
    ),
    description="Financially motivated actor that abuses application identities with stolen credentials.",
)


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    app_id: str
    label: int
    stages_enacted: tuple = ()
    n_benign_records: int = 100
    n_malicious_records: int = 0
    proxy_ips: tuple = ()
    benign_ips: tuple = ("10.0.0.10",)
    sensitive_resources: tuple = ()
    normal_resources: tuple = ("Azure Storage",)
    suspicious_patterns: tuple = ()
    seed: int = 0

    def __post_init__(self):
        label = int(self.label)
        unknown = set(self.stages_enacted) - set(KILL_CHAIN_STAGES)
        if unknown:
            raise ScenarioError(f"unknown stages: {sorted(unknown)}")
        if label not in (0, 1, 2):
            raise ScenarioError(f"label must be 0, 1 or 2, got {self.label}")
        if self.n_benign_records < 0 or self.n_malicious_records < 0:
            raise ScenarioError("record counts must be >= 0")
        if not self.benign_ips and self.n_benign_records:
            raise ScenarioError("benign traffic needs at least one benign ip")
        if label == 2:
            if len(set(self.stages_enacted)) < 2:
                raise ScenarioError("a compromised app enacts at least two stages")
            if self.n_malicious_records < minimum_malicious_records(self.stages_enacted):
                raise ScenarioError("n_malicious_records below the signature minimum of the enacted stages")
            if "Defense Evasion" in self.stages_enacted and not self.proxy_ips:
                raise ScenarioError("Defense Evasion needs a proxy ip")
            if "Initial Access" in self.stages_enacted and not self.sensitive_resources:
                raise ScenarioError("Initial Access needs a sensitive permitted resource")
        else:
            if self.stages_enacted:
                raise ScenarioError(f"label {label} apps enact no stages")
            if self.n_malicious_records:
                raise ScenarioError(f"label {label} apps carry no malicious records")
        if label == 0 and self.suspicious_patterns:
            raise ScenarioError("label 0 apps carry no suspicious patterns")
        if label == 1 and not self.suspicious_patterns:
            raise ScenarioError("label 1 apps need at least one suspicious pattern")
        bad = set(self.suspicious_patterns) - set(SUSPICIOUS_PATTERNS)
        if bad:
            raise ScenarioError(f"unknown suspicious patterns: {sorted(bad)}")

    @property
    def permitted(self) -> tuple:
        return tuple(dict.fromkeys(self.sensitive_resources + self.normal_resources))


def minimum_malicious_records(stages) -> int:
    # one session sign-in per stage plus its signature events
    return sum(1 + sum(e.min_count for e in STAGE_RULES[s].events) for s in stages)


def _ts(rng, start: datetime) -> datetime:
    return start + timedelta(microseconds=int(rng.integers(0, int(WINDOW.total_seconds() * 1e6))))


def _benign_records(spec: ScenarioSpec, rng, start: datetime, actor: str) -> list:
    permitted = spec.permitted
    typed = [r for r in permitted if r in RESOURCE_LOG_TYPE]
    out = []
    for _ in range(spec.n_benign_records):
        ip = spec.benign_ips[int(rng.integers(len(spec.benign_ips)))]
        if not typed or rng.random() < SIGNIN_FRACTION:
            res = permitted[int(rng.integers(len(permitted)))]
            out.append(LogRecord(_ts(rng, start), spec.app_id, "signin", ip, "Sign-in", res, "0", actor))
        else:
            res = typed[int(rng.integers(len(typed)))]
            log_type = RESOURCE_LOG_TYPE[res]
            ops = BENIGN_OPS[log_type]
            op = ops[int(rng.integers(len(ops)))]
            out.append(LogRecord(_ts(rng, start), spec.app_id, log_type, ip, op, res, _OP_RESULT[log_type], actor))
    return out


def _unpermitted(spec: ScenarioSpec) -> str:
    for res in RESOURCE_CATALOG:
        if res not in spec.permitted:
            return res
    return "Azure SQL Database (other tenant)"


def attacker_ip(spec: ScenarioSpec) -> str:
    if "Defense Evasion" in spec.stages_enacted:
        return spec.proxy_ips[0]
    return f"203.0.113.{1 + spec.seed % 250}"


def _attack_records(spec: ScenarioSpec, rng, start: datetime, actor: str) -> list:
    """Attack burst: per enacted stage, a session sign-in then its signature events."""
    if spec.label != 2:
        return []
    ip = attacker_ip(spec)
    primary = spec.sensitive_resources[0] if spec.sensitive_resources else spec.permitted[0]
    t = start + timedelta(seconds=float(rng.uniform(0.1, 0.8)) * WINDOW.total_seconds())
    plan = []
    order = [s for s in KILL_CHAIN_STAGES if s in spec.stages_enacted]
    for stage in order:
        if "Initial Access" in spec.stages_enacted:
            plan.append(("signin", "Sign-in", primary, "0"))
        for ev in STAGE_RULES[stage].events:
            res = {"@primary": primary, "@unpermitted": _unpermitted(spec)}.get(ev.resource, ev.resource)
            plan.extend([(ev.log_type, ev.operation, res, ev.result_code)] * ev.min_count)
    # padding: repeat the last concrete events until the requested volume is reached
    concrete = [p for p in plan if p[0] != "signin"] or plan
    while len(plan) < spec.n_malicious_records and concrete:
        plan.append(concrete[len(plan) % len(concrete)])
    out = []
    for log_type, op, res, code in plan:
        t += timedelta(seconds=float(rng.uniform(5, 90)))
        out.append(LogRecord(t, spec.app_id, log_type, ip, op, res, code, actor))
    return out


def _suspicious_records(spec: ScenarioSpec, rng, start: datetime, actor: str) -> list:
    out = []
    n = max(3, spec.n_benign_records // 20)
    for pattern in spec.suspicious_patterns:
        for _ in range(n):
            if pattern == "expired_credential":
                ip = spec.benign_ips[int(rng.integers(len(spec.benign_ips)))]
                out.append(LogRecord(_ts(rng, start), spec.app_id, "signin", ip, "Sign-in",
                                     spec.permitted[0], "7000222", actor))
            elif pattern == "failed_signin":
                ip = FAILED_SIGNIN_IPS[int(rng.integers(len(FAILED_SIGNIN_IPS)))]
                out.append(LogRecord(_ts(rng, start), spec.app_id, "signin", ip, "Sign-in",
                                     spec.permitted[0], "7000215", actor))
            elif pattern == "vault_denied":
                ip = DENIED_VAULT_IPS[int(rng.integers(len(DENIED_VAULT_IPS)))]
                out.append(LogRecord(_ts(rng, start), spec.app_id, "keyvault", ip, "SecretGet",
                                     "Azure Key Vault", "403", actor))
    return out


def _enrichment(spec: ScenarioSpec, records, rng, start: datetime) -> EnrichmentBundle:
    resources: dict = {}
    for r in records:
        resources.setdefault(r.ip, [])
        if r.result_code in ("0", "200", "201", "204") and r.resource not in resources[r.ip]:
            resources[r.ip].append(r.resource)
    details = []
    for ip in sorted(resources):
        accessed = tuple(ResourceAccess(res, RESOURCE_CATALOG.get(res, "normal")) for res in sorted(resources[ip]))
        if ip in spec.benign_ips:
            details.append(IpDetail(ip, _CITIES[hash_index(ip, len(_CITIES))], "Contoso Corporate Network",
                                    False, True, accessed))
        elif ip in spec.proxy_ips or ip in FAILED_SIGNIN_IPS:
            details.append(IpDetail(ip, "Unknown", "Anonymous VPN Services", True, False, accessed))
        else:
            details.append(IpDetail(ip, "Unknown", "Budget Hosting Ltd", False, False, accessed))
    perms = tuple(Permission(res, "Application.ReadWrite" if res in spec.sensitive_resources else "Read",
                             res in spec.sensitive_resources) for res in spec.permitted)
    creds = [Credential("cred-1", start - timedelta(days=200), start + timedelta(days=365),
                        start - timedelta(days=30))]
    if "expired_credential" in spec.suspicious_patterns:
        creds.append(Credential("cred-0", start - timedelta(days=400), start - timedelta(days=35)))
    alerts = []
    if spec.label == 2 and rng.random() < 0.3:
        alerts.append(Alert("alert-1", "Sign-in from an unfamiliar location", "Medium"))
    if "failed_signin" in spec.suspicious_patterns and rng.random() < 0.3:
        alerts.append(Alert("alert-2", "Repeated failed sign-ins", "Low"))
    return EnrichmentBundle(tuple(details), perms, tuple(creds), tuple(alerts))


def hash_index(text: str, n: int) -> int:
    return derive_seed(text) % n


def generate_app(spec: ScenarioSpec) -> ApplicationBundle:
    rng = np.random.default_rng(spec.seed)
    start = EPOCH + timedelta(hours=int(rng.integers(0, 24 * 60)))
    actor = f"sp-{spec.app_id}"
    records = _benign_records(spec, rng, start, actor)
    records += _suspicious_records(spec, rng, start, actor)
    records += _attack_records(spec, rng, start, actor)
    records.sort(key=lambda r: (r.ts, r.log_type, r.ip, r.operation))
    enrichment = _enrichment(spec, records, rng, start)
    return ApplicationBundle(spec.app_id, tuple(records), enrichment, Category(spec.label))


@dataclass
class CorpusSettings:
    """Distribution knobs for :func:`random_spec`; rates are configuration, not claims."""

    signin_median: float = 60.0
    signin_sigma: float = 1.3
    high_volume_rate: float = 0.12
    high_volume_range: tuple = (1300, 4000)
    extra_stages: tuple = (1, 4)
    patterns: tuple = field(default=SUSPICIOUS_PATTERNS)


def draw_signins(rng, settings: CorpusSettings) -> int:
    """Heavy-tailed sign-in volume: lognormal bulk plus a log-uniform high-volume tail."""
    if rng.random() < settings.high_volume_rate:
        lo, hi = settings.high_volume_range
        return int(math.exp(rng.uniform(math.log(lo), math.log(hi))))
    return max(1, int(round(rng.lognormal(math.log(settings.signin_median), settings.signin_sigma))))


def random_spec(app_id: str, label: int, seed: int, settings: Optional[CorpusSettings] = None) -> ScenarioSpec:
    settings = settings or CorpusSettings()
    rng = np.random.default_rng(seed)
    n_records = max(1, int(round(draw_signins(rng, settings) / SIGNIN_FRACTION)))
    benign_ips = tuple(f"10.{rng.integers(0, 256)}.{rng.integers(0, 256)}.{rng.integers(1, 255)}"
                       for _ in range(int(rng.integers(2, 6))))
    benign_ips = tuple(dict.fromkeys(benign_ips))
    normal = tuple(sorted(rng.choice(NORMAL_RESOURCES, size=int(rng.integers(1, 3)), replace=False)))
    if label == 2:
        others = [s for s in KILL_CHAIN_STAGES if s not in ("Initial Access", "Defense Evasion")]
        k = int(rng.integers(settings.extra_stages[0], settings.extra_stages[1] + 1))
        stages = ("Initial Access", "Defense Evasion") + tuple(rng.choice(others, size=k, replace=False))
        stages = tuple(s for s in KILL_CHAIN_STAGES if s in stages)
        sensitive = ("Microsoft Graph",) + tuple(
            r for r in HIGH_RESOURCES[1:] if rng.random() < 0.5)
        n_mal = minimum_malicious_records(stages) + int(rng.integers(0, 10))
        return ScenarioSpec(app_id, 2, stages, n_records, n_mal, (f"198.51.100.{rng.integers(1, 255)}",),
                            benign_ips, sensitive, normal, (), seed)
    sensitive = ("Microsoft Graph",) if rng.random() < 0.5 else ()
    patterns = ()
    if label == 1:
        mask = rng.random(len(settings.patterns)) < 0.5
        if not mask.any():
            mask[int(rng.integers(len(mask)))] = True
        patterns = tuple(p for p, m in zip(settings.patterns, mask) if m)
    return ScenarioSpec(app_id, label, (), n_records, 0, (), benign_ips, sensitive, normal, patterns, seed)


def generate_corpus(n_malicious: int, n_benign_ns: int, n_benign_s: int, seed: int = 0, *,
                    out_dir=None, settings: Optional[CorpusSettings] = None,
                    profile: ThreatActorProfile = DEFAULT_PROFILE):
    """Generate ``n_malicious`` compromised, ``n_benign_ns`` clean and ``n_benign_s`` suspicious apps.

    Labels are shuffled over app ids ``app-0001...`` so id order carries no
    signal. With ``out_dir`` the corpus, ``labels.json`` and ``profile.yaml``
    are written in the corpus layout. Returns ``(bundles, labels)``.
    """
    if min(n_malicious, n_benign_ns, n_benign_s) < 0:
        raise ScenarioError("counts must be >= 0")
    labels = [2] * n_malicious + [0] * n_benign_ns + [1] * n_benign_s
    order = np.random.default_rng(derive_seed(seed, "corpus-order")).permutation(len(labels))
    bundles, label_map = [], {}
    for i, idx in enumerate(order, start=1):
        app_id = f"app-{i:04d}"
        spec = random_spec(app_id, labels[idx], derive_seed(seed, app_id), settings)
        bundles.append(generate_app(spec))
        label_map[app_id] = labels[idx]
    if out_dir is not None:
        out = Path(out_dir)
        for b in bundles:
            write_application(b, out)
        write_labels(label_map, out / "labels.json")
        (out / "profile.yaml").write_text(serialize_profile(profile), encoding="utf-8")
    return bundles, label_map
