"""Text embedders behind a minimal pluggable interface.

The default is a deterministic feature-hashing embedder so indexes, cache
decisions, and tests are reproducible without model weights. A production
deployment swaps in the HTTP embedder pointing at a real encoder service.
"""

from __future__ import annotations

import hashlib
import re
from typing import Protocol

import numpy as np
import requests

from .errors import TransportError

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric tokens; shared by embedding and sparse scoring."""
    return _TOKEN_RE.findall(text.lower())


def unit_normalize(vector: np.ndarray) -> np.ndarray:
    """Scale to unit L2 norm; an all-zero vector is returned unchanged."""
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        return vector
    return vector / norm


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashingEmbedder:
    """Deterministic bag-of-tokens embedder via signed feature hashing.

    Token counts are hashed into ``dim`` buckets with a stable +-1 sign, then
    L2-normalized. Identical texts map to identical unit vectors, so
    self-similarity is exactly 1.0.
    """

    def __init__(self, dim: int = 256):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self.dim = dim
        self._bucket_cache: dict[str, tuple[int, float]] = {}

    def _bucket(self, token: str) -> tuple[int, float]:
        cached = self._bucket_cache.get(token)
        if cached is None:
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            value = int.from_bytes(digest, "big")
            cached = (value % self.dim, 1.0 if (value >> 63) & 1 else -1.0)
            self._bucket_cache[token] = cached
        return cached

    def embed(self, text: str) -> np.ndarray:
        vector = np.zeros(self.dim, dtype=np.float64)
        for token in tokenize(text):
            bucket, sign = self._bucket(token)
            vector[bucket] += sign
        return unit_normalize(vector)


class HttpEmbedder:
    """Client for an embedding endpoint returning {"data": [{"embedding": [...]}]}."""

    def __init__(self, url: str, dim: int, *, auth_token: str | None = None, timeout_s: float = 60.0):
        self.url = url
        self.dim = dim
        self.auth_token = auth_token
        self.timeout_s = timeout_s

    def embed(self, text: str) -> np.ndarray:
        headers = {"Content-Type": "application/json"}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        try:
            resp = requests.post(
                self.url, json={"input": [text]}, headers=headers, timeout=self.timeout_s
            )
            resp.raise_for_status()
            values = resp.json()["data"][0]["embedding"]
        except (requests.RequestException, KeyError, IndexError, TypeError, ValueError) as exc:
            raise TransportError(f"embedding request failed: {exc}") from exc
        vector = np.asarray(values, dtype=np.float64)
        if vector.shape != (self.dim,):
            raise TransportError(f"embedding has shape {vector.shape}, expected ({self.dim},)")
        return unit_normalize(vector)
