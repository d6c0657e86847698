"""Text embedding backends."""

from __future__ import annotations

import hashlib
from functools import lru_cache
from typing import Protocol

import httpx
import numpy as np

from ..clients import _auth_headers


class EmbeddingBackend(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashEmbeddingBackend:
    """Deterministic unit vectors seeded by a hash of the text. For tests only."""

    def __init__(self, dim: int = 512, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed
        self._cached = lru_cache(maxsize=65536)(self._compute)

    def _compute(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}\x00{text}".encode("utf-8")).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:16], "little")))
        v = rng.standard_normal(self.dim)
        v /= np.linalg.norm(v)
        v.setflags(write=False)
        return v

    def embed(self, text: str) -> np.ndarray:
        return self._cached(text)


class HttpEmbeddingBackend:
    """OpenAI-style ``/embeddings`` endpoint: ``{"model", "input"}`` -> ``data[0].embedding``."""

    def __init__(self, endpoint: str, model: str, dim: int, key_env: str | None = None,
                 timeout: float = 60.0, http: httpx.Client | None = None):
        self.endpoint = endpoint
        self.model = model
        self.dim = dim
        self.key_env = key_env
        self._http = http or httpx.Client(timeout=timeout)
        self._cached = lru_cache(maxsize=65536)(self._fetch)

    def _fetch(self, text: str) -> np.ndarray:
        resp = self._http.post(self.endpoint, json={"model": self.model, "input": text},
                               headers=_auth_headers(self.key_env))
        resp.raise_for_status()
        v = np.asarray(resp.json()["data"][0]["embedding"], dtype=np.float64)
        if v.shape != (self.dim,):
            raise ValueError(f"embedding service returned shape {v.shape}, expected ({self.dim},)")
        v.setflags(write=False)
        return v

    def embed(self, text: str) -> np.ndarray:
        return self._cached(text)


def embed_text(backend: EmbeddingBackend, text: str) -> np.ndarray:
    return backend.embed(text)
