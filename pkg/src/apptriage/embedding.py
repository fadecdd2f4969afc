"""Log-record embeddings: a deterministic hashing featurizer and a remote client."""
from __future__ import annotations

import hashlib
import logging
import os
import re
import threading
import time
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np
import requests
from sklearn.base import BaseEstimator, TransformerMixin

from .corpus import LogRecord

logger = logging.getLogger(__name__)

DEFAULT_DIM = 64
_PROBES = 4
_SPLIT = re.compile(r"[^0-9A-Za-z]+")
_FIELDS = ("log_type", "ip", "operation", "resource", "result_code", "actor")


class EmbeddingError(RuntimeError):
    pass


class DimensionMismatchError(EmbeddingError):
    pass


def record_tokens(record: LogRecord) -> list[str]:
    """Field-tagged tokens of a record; the timestamp is deliberately left out."""
    items = [(f, getattr(record, f)) for f in _FIELDS]
    items += sorted((f"extra.{k}", v) for k, v in record.extra.items())
    tokens = []
    for name, value in items:
        if not value:
            continue
        tokens.append(f"{name}={value}")
        parts = [p for p in _SPLIT.split(value.lower()) if p]
        if len(parts) > 1:
            tokens.extend(f"{name}:{p}" for p in parts)
    return tokens


def record_text(record: LogRecord) -> str:
    """Flat text used for remote embedding requests."""
    return " ".join(record_tokens(record))


@lru_cache(maxsize=65536)
def _token_slots(token: str, dim: int) -> tuple:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8 * _PROBES).digest()
    slots = []
    for i in range(_PROBES):
        word = int.from_bytes(digest[8 * i:8 * i + 8], "big")
        slots.append((word % dim, 1.0 if (word >> 63) & 1 else -1.0))
    return tuple(slots)


def hash_embed(record: LogRecord, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Signed feature hashing of the record's tokens, scaled to unit norm.

    Each token lands in several buckets so that a single differing field
    almost never collides away. A record with no tokens maps to e_0.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    vec = np.zeros(dim, dtype=np.float64)
    for token in record_tokens(record):
        for slot, sign in _token_slots(token, dim):
            vec[slot] += sign
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        vec[:] = 0.0
        vec[0] = 1.0
        return vec
    return vec / norm


class EmbeddingProvider(Protocol):
    name: str
    dim: int

    def embed(self, records: Sequence[LogRecord]) -> np.ndarray: ...


class HashingLogEmbedder(TransformerMixin, BaseEstimator):
    """Stateless transformer: list of LogRecord -> (n, dim) array."""

    name = "hashing"

    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = dim

    def fit(self, X=None, y=None):
        if self.dim < 2:
            raise ValueError("dim must be >= 2")
        return self

    def transform(self, X) -> np.ndarray:
        if not len(X):
            return np.zeros((0, self.dim))
        out = np.empty((len(X), self.dim))
        seen: dict = {}
        for i, rec in enumerate(X):
            key = (rec.log_type, rec.ip, rec.operation, rec.resource, rec.result_code, rec.actor,
                   tuple(sorted(rec.extra.items())))
            if key not in seen:
                seen[key] = hash_embed(rec, self.dim)
            out[i] = seen[key]
        return out

    def embed(self, records):
        return self.transform(records)

    def __sklearn_is_fitted__(self):
        return True


class RemoteEmbeddingProvider:
    """Client for an HTTP embedding service.

    Request body ``{"inputs": [text, ...]}``; the response must be either a
    bare list of float arrays or ``{"embeddings": [...]}``.
    """

    name = "remote"

    def __init__(self, endpoint: str, api_key: str = "", dim: int = DEFAULT_DIM, *, timeout: float = 30.0,
                 retries: int = 3, backoff: float = 0.5, batch_size: int = 256, max_in_flight: int = 4,
                 session: requests.Session | None = None):
        if not endpoint:
            raise EmbeddingError("no embedding endpoint configured")
        self.endpoint = endpoint
        self.api_key = api_key
        self.dim = dim
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self.batch_size = batch_size
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._session = session or requests.Session()

    @classmethod
    def from_env(cls, dim: int = DEFAULT_DIM, **kwargs) -> "RemoteEmbeddingProvider":
        return cls(os.environ.get("EMBED_ENDPOINT", ""), os.environ.get("EMBED_API_KEY", ""), dim, **kwargs)

    def _post(self, texts: list[str]) -> list:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error = None
        for attempt in range(self.retries + 1):
            try:
                with self._gate:
                    resp = self._session.post(self.endpoint, json={"inputs": texts}, headers=headers,
                                              timeout=self.timeout)
                if resp.status_code >= 500 or resp.status_code == 429:
                    last_error = EmbeddingError(f"embedding service returned {resp.status_code}")
                elif resp.status_code >= 400:
                    raise EmbeddingError(f"embedding service rejected request: {resp.status_code}")
                else:
                    body = resp.json()
                    return body["embeddings"] if isinstance(body, dict) else body
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
            if attempt < self.retries:
                time.sleep(self.backoff * (2 ** attempt))
        raise EmbeddingError(f"embedding service unreachable after {self.retries + 1} attempts: {last_error}")

    def embed(self, records: Sequence[LogRecord]) -> np.ndarray:
        rows = []
        for start in range(0, len(records), self.batch_size):
            chunk = records[start:start + self.batch_size]
            vectors = self._post([record_text(r) for r in chunk])
            if len(vectors) != len(chunk):
                raise DimensionMismatchError(f"expected {len(chunk)} vectors, got {len(vectors)}")
            for vec in vectors:
                if len(vec) != self.dim:
                    raise DimensionMismatchError(f"expected dim {self.dim}, got {len(vec)}")
                rows.append(vec)
        arr = np.asarray(rows, dtype=np.float64).reshape(len(rows), self.dim)
        if not np.all(np.isfinite(arr)):
            raise EmbeddingError("embedding service returned non-finite values")
        return arr


def embed_batch(provider, records: Sequence[LogRecord]) -> np.ndarray:
    if not len(records):
        raise ValueError("records must be non-empty")
    out = np.asarray(provider.embed(list(records)), dtype=np.float64)
    if out.shape != (len(records), provider.dim):
        raise DimensionMismatchError(f"provider returned shape {out.shape}, expected {(len(records), provider.dim)}")
    return out
