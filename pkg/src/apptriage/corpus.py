"""Loading of per-application logs and enrichment tables, and count-based segmentation.

On-disk layout of a corpus directory::

    corpus/
      labels.json                 # {"app-0001": 2, ...}  (optional)
      profile.yaml                # threat-actor profile   (optional)
      apps/<app_id>/logs.jsonl    # one LogRecord per line
      apps/<app_id>/enrichment/{ip_details,permissions,credentials,alerts}.jsonl
"""
from __future__ import annotations

import ipaddress
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Optional

LOG_TYPES = ("signin", "msgraph", "keyvault", "storage", "kusto", "other")
RECORD_KEYS = ("ts", "app_id", "log_type", "ip", "operation", "resource", "result_code", "actor", "extra")
REQUIRED_KEYS = ("ts", "app_id", "log_type")
ENRICHMENT_FILES = ("ip_details", "permissions", "credentials", "alerts")


class CorpusError(ValueError):
    """Raised for unreadable or malformed corpus inputs."""


class LogParseError(CorpusError):
    def __init__(self, path, line_no: int, message: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class EnrichmentError(CorpusError):
    pass


class Category(IntEnum):
    """Application categories used as ground-truth labels."""

    BENIGN_NONSUSPICIOUS = 0
    BENIGN_SUSPICIOUS = 1
    COMPROMISED = 2


def parse_ts(value) -> datetime:
    if isinstance(value, datetime):
        ts = value
    else:
        text = str(value).strip()
        if text.endswith("Z"):
            text = text[:-1] + "+00:00"
        ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_ts(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S.%fZ")


def normalize_ip(value: str) -> str:
    """Canonical ip text, or '' when the value does not parse as v4/v6."""
    value = (value or "").strip()
    if not value:
        return ""
    try:
        return str(ipaddress.ip_address(value))
    except ValueError:
        return ""


@dataclass(frozen=True)
class LogRecord:
    ts: datetime
    app_id: str
    log_type: str
    ip: str = ""
    operation: str = ""
    resource: str = ""
    result_code: str = ""
    actor: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ts": format_ts(self.ts),
            "app_id": self.app_id,
            "log_type": self.log_type,
            "ip": self.ip,
            "operation": self.operation,
            "resource": self.resource,
            "result_code": self.result_code,
            "actor": self.actor,
            "extra": dict(sorted(self.extra.items())),
        }

    @classmethod
    def from_dict(cls, row: dict) -> "LogRecord":
        missing = [k for k in REQUIRED_KEYS if not row.get(k)]
        if missing:
            raise ValueError(f"missing required field(s): {', '.join(missing)}")
        try:
            ts = parse_ts(row["ts"])
        except (TypeError, ValueError) as exc:
            raise ValueError(f"invalid ts {row['ts']!r}") from exc
        extra = row.get("extra") or {}
        if not isinstance(extra, dict):
            raise ValueError("extra must be an object")
        extra = {str(k): str(v) for k, v in extra.items()}
        # unknown top-level keys are kept rather than dropped
        for key, value in row.items():
            if key not in RECORD_KEYS:
                extra[str(key)] = str(value)
        log_type = str(row["log_type"]).strip().lower()
        if log_type not in LOG_TYPES:
            extra.setdefault("log_type_raw", str(row["log_type"]))
            log_type = "other"
        raw_ip = str(row.get("ip") or "")
        ip = normalize_ip(raw_ip)
        if raw_ip and not ip:
            extra.setdefault("ip_raw", raw_ip)
        return cls(
            ts=ts,
            app_id=str(row["app_id"]),
            log_type=log_type,
            ip=ip,
            operation=str(row.get("operation") or ""),
            resource=str(row.get("resource") or ""),
            result_code=str(row.get("result_code") or ""),
            actor=str(row.get("actor") or ""),
            extra=extra,
        )


def load_log_file(path) -> list[LogRecord]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc
    records = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogParseError(path, line_no, f"malformed JSON ({exc.msg})") from exc
        if not isinstance(row, dict):
            raise LogParseError(path, line_no, "record is not an object")
        try:
            records.append(LogRecord.from_dict(row))
        except ValueError as exc:
            raise LogParseError(path, line_no, str(exc)) from exc
    return records


def dump_log_file(records: Iterable[LogRecord], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")


@dataclass(frozen=True)
class ResourceAccess:
    resource: str
    sensitivity: str = "normal"  # "high" | "normal"


@dataclass(frozen=True)
class IpDetail:
    ip: str
    city: str = ""
    isp: str = ""
    is_proxy: bool = False
    is_benign_known: bool = False
    resources_accessed: tuple = ()


@dataclass(frozen=True)
class Permission:
    resource: str
    privilege: str = ""
    sensitive: bool = False


@dataclass(frozen=True)
class Credential:
    credential_id: str
    created: datetime
    expires: datetime
    rotated: Optional[datetime] = None


@dataclass(frozen=True)
class Alert:
    alert_id: str
    title: str = ""
    severity: str = ""


@dataclass(frozen=True)
class EnrichmentBundle:
    ip_details: tuple = ()
    permissions: tuple = ()
    credentials: tuple = ()
    alerts: tuple = ()

    def __post_init__(self):
        seen = set()
        for detail in self.ip_details:
            if detail.ip in seen:
                raise EnrichmentError(f"duplicate ip in ip_details: {detail.ip}")
            seen.add(detail.ip)
        for cred in self.credentials:
            if cred.expires < cred.created:
                raise EnrichmentError(f"credential {cred.credential_id} expires before it was created")

    @property
    def is_empty(self) -> bool:
        return not (self.ip_details or self.permissions or self.credentials or self.alerts)

    def ip_index(self) -> dict:
        return {d.ip: d for d in self.ip_details}

    def to_rows(self) -> dict:
        return {
            "ip_details": [
                {
                    "ip": d.ip,
                    "city": d.city,
                    "isp": d.isp,
                    "is_proxy": d.is_proxy,
                    "is_benign_known": d.is_benign_known,
                    "resources_accessed": [
                        {"resource": r.resource, "sensitivity": r.sensitivity} for r in d.resources_accessed
                    ],
                }
                for d in self.ip_details
            ],
            "permissions": [
                {"resource": p.resource, "privilege": p.privilege, "sensitive": p.sensitive} for p in self.permissions
            ],
            "credentials": [
                {
                    "credential_id": c.credential_id,
                    "created": format_ts(c.created),
                    "rotated": format_ts(c.rotated) if c.rotated else None,
                    "expires": format_ts(c.expires),
                }
                for c in self.credentials
            ],
            "alerts": [{"alert_id": a.alert_id, "title": a.title, "severity": a.severity} for a in self.alerts],
        }


def _as_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in ("true", "1", "yes"):
        return True
    if isinstance(value, str) and value.strip().lower() in ("false", "0", "no", ""):
        return False
    if isinstance(value, (int, float)):
        return bool(value)
    raise ValueError(f"not a boolean: {value!r}")


def _ip_detail(row: dict) -> IpDetail:
    ip = normalize_ip(str(row["ip"]))
    if not ip:
        raise ValueError(f"invalid ip {row['ip']!r}")
    resources = []
    for item in row.get("resources_accessed") or []:
        sensitivity = str(item.get("sensitivity", "normal")).lower()
        if sensitivity not in ("high", "normal"):
            raise ValueError(f"invalid sensitivity {sensitivity!r}")
        resources.append(ResourceAccess(str(item["resource"]), sensitivity))
    return IpDetail(
        ip=ip,
        city=str(row.get("city") or ""),
        isp=str(row.get("isp") or ""),
        is_proxy=_as_bool(row.get("is_proxy", False)),
        is_benign_known=_as_bool(row.get("is_benign_known", False)),
        resources_accessed=tuple(resources),
    )


def _permission(row: dict) -> Permission:
    return Permission(str(row["resource"]), str(row.get("privilege") or ""), _as_bool(row.get("sensitive", False)))


def _credential(row: dict) -> Credential:
    rotated = row.get("rotated")
    return Credential(
        credential_id=str(row["credential_id"]),
        created=parse_ts(row["created"]),
        expires=parse_ts(row["expires"]),
        rotated=parse_ts(rotated) if rotated else None,
    )


def _alert(row: dict) -> Alert:
    return Alert(str(row["alert_id"]), str(row.get("title") or ""), str(row.get("severity") or ""))


_ROW_PARSERS = {
    "ip_details": _ip_detail,
    "permissions": _permission,
    "credentials": _credential,
    "alerts": _alert,
}


def _read_rows(path: Path) -> list[dict]:
    rows = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise EnrichmentError(f"{path}:{line_no}: malformed row ({exc.msg})") from exc
        if not isinstance(row, dict):
            raise EnrichmentError(f"{path}:{line_no}: row is not an object")
        rows.append((line_no, row))
    return rows


def load_enrichments(directory) -> EnrichmentBundle:
    """Read whichever of the four enrichment tables exist; absent ones are empty."""
    directory = Path(directory)
    tables = {}
    for name in ENRICHMENT_FILES:
        path = directory / f"{name}.jsonl"
        items = []
        if path.exists():
            for line_no, row in _read_rows(path):
                try:
                    items.append(_ROW_PARSERS[name](row))
                except (KeyError, ValueError, TypeError) as exc:
                    raise EnrichmentError(f"{path}:{line_no}: {exc!r}") from exc
        tables[name] = tuple(items)
    return EnrichmentBundle(**tables)


def dump_enrichments(bundle: EnrichmentBundle, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, rows in bundle.to_rows().items():
        with (directory / f"{name}.jsonl").open("w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")


@dataclass(frozen=True)
class Segment:
    app_id: str
    index: int
    records: tuple


def segment_application(records, segment_cap: int) -> list[Segment]:
    """Split time-sorted records into contiguous chunks of at most ``segment_cap``."""
    if segment_cap < 1:
        raise ValueError("segment_cap must be >= 1")
    records = list(records)
    for prev, cur in zip(records, records[1:]):
        if cur.ts < prev.ts:
            raise ValueError("records must be sorted by timestamp before segmentation")
    app_id = records[0].app_id if records else ""
    n_segments = math.ceil(len(records) / segment_cap)
    return [
        Segment(app_id, i, tuple(records[i * segment_cap:(i + 1) * segment_cap]))
        for i in range(n_segments)
    ]


@dataclass(frozen=True)
class ApplicationBundle:
    app_id: str
    records: tuple
    enrichment: EnrichmentBundle = EnrichmentBundle()
    label: Optional[Category] = None

    @property
    def signin_count(self) -> int:
        return sum(1 for r in self.records if r.log_type == "signin")


def load_application(app_dir, label: Optional[int] = None) -> ApplicationBundle:
    app_dir = Path(app_dir)
    app_id = app_dir.name
    records = load_log_file(app_dir / "logs.jsonl")
    for i, rec in enumerate(records, start=1):
        if rec.app_id != app_id:
            raise LogParseError(app_dir / "logs.jsonl", i, f"app_id {rec.app_id!r} does not match directory {app_id!r}")
    records.sort(key=lambda r: r.ts)
    enrichment = load_enrichments(app_dir / "enrichment")
    return ApplicationBundle(app_id, tuple(records), enrichment, Category(label) if label is not None else None)


def write_application(bundle: ApplicationBundle, corpus_dir) -> Path:
    app_dir = Path(corpus_dir) / "apps" / bundle.app_id
    dump_log_file(bundle.records, app_dir / "logs.jsonl")
    dump_enrichments(bundle.enrichment, app_dir / "enrichment")
    return app_dir


def list_applications(corpus_dir) -> list[str]:
    apps = Path(corpus_dir) / "apps"
    if not apps.is_dir():
        raise CorpusError(f"{corpus_dir} has no apps/ directory")
    return sorted(p.name for p in apps.iterdir() if p.is_dir())


def load_labels(path) -> dict[str, Category]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusError(f"cannot read labels file {path}: {exc}") from exc
    try:
        return {str(k): Category(int(v)) for k, v in raw.items()}
    except (ValueError, AttributeError) as exc:
        raise CorpusError(f"invalid label code in {path}: {exc}") from exc


def write_labels(labels: dict, path) -> None:
    Path(path).write_text(
        json.dumps({k: int(v) for k, v in sorted(labels.items())}, indent=2) + "\n", encoding="utf-8"
    )
