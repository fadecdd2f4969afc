"""Analysis configuration: defaults, file loading and validation."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import yaml


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AnalysisConfig:
    segment_cap: int = 40_000
    target_k: int = 500
    runs: int = 5
    thresholds: tuple = (3, 4, 5)
    min_signin_count: int = 5
    criteria: str = "focused"  # "baseline", "focused" or a path to a criteria file
    reasoner: str = "mock"  # "mock" | "remote"
    noise: float = 0.0
    max_review_rounds: int = 2
    force_review: bool = False
    review_rules: Optional[str] = None
    seed: int = 0
    parallelism: int = 1
    token_budget: int = 100_000
    embedder: str = "hash"  # "hash" | "remote"
    embed_dim: int = 64
    metric: str = "euclidean"
    n_trees: int = 100
    subsample_size: int = 256
    contamination: float = 0.05
    audit: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(int(t) for t in self.thresholds))
        problems = []
        if self.runs < 1:
            problems.append("runs must be >= 1")
        if not self.thresholds:
            problems.append("thresholds must be non-empty")
        if any(t < 0 for t in self.thresholds):
            problems.append("thresholds must be >= 0")
        if not 0.0 <= self.noise < 1.0:
            problems.append("noise must lie in [0, 1)")
        if self.segment_cap < 1 or self.target_k < 1:
            problems.append("segment_cap and target_k must be >= 1")
        if self.parallelism < 1:
            problems.append("parallelism must be >= 1")
        if self.max_review_rounds < 0:
            problems.append("max_review_rounds must be >= 0")
        if self.min_signin_count < 0:
            problems.append("min_signin_count must be >= 0")
        if self.reasoner not in ("mock", "remote"):
            problems.append(f"unknown reasoner {self.reasoner!r}")
        if self.embedder not in ("hash", "remote"):
            problems.append(f"unknown embedder {self.embedder!r}")
        if self.metric not in ("euclidean", "cosine"):
            problems.append(f"unknown metric {self.metric!r}")
        if self.token_budget < 1:
            problems.append("token_budget must be >= 1")
        if problems:
            raise ConfigError("; ".join(problems))

    def with_overrides(self, **overrides) -> "AnalysisConfig":
        """Copy with every non-None override applied (command-line flags win over files)."""
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["thresholds"] = list(self.thresholds)
        return d


def load_config(path) -> AnalysisConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
        data = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (OSError, ValueError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    data = {k.replace("-", "_"): v for k, v in data.items()}
    try:
        return AnalysisConfig().with_overrides(**data)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
