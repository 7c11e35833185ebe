"""Clients for the embedding HTTP contract, plus offline substitutes.

The live service exposes POST /v1/embed with {"kind", "inputs"} and returns
unit-normalized vectors. For reproducible offline runs there are two
substitutes: a recorded-response store and a hash-seeded deterministic
embedder that needs no service at all.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class EmbeddingError(Exception):
    pass


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    """Vectors from the embed contract are unit-normalized, so cosine is a
    plain dot product."""
    return float(np.dot(np.asarray(a, dtype=float), np.asarray(b, dtype=float)))


class HttpEmbeddingClient:
    def __init__(self, base_url: str, timeout: float = 60.0, api_token: Optional[str] = None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.api_token = api_token

    def embed(self, kind: str, inputs: list[str]) -> list[list[float]]:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_token:
            headers["X-Embed-Token"] = self.api_token
        try:
            resp = requests.post(
                f"{self.base_url}/v1/embed",
                json={"kind": kind, "inputs": inputs},
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise EmbeddingError(str(exc)) from exc
        if resp.status_code != 200:
            raise EmbeddingError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        payload = resp.json()
        vectors = payload.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(inputs):
            raise EmbeddingError("malformed embed response")
        return vectors


class DeterministicEmbedder:
    """Offline stand-in: each (kind, input) maps to a fixed pseudo-random
    unit vector seeded from a content hash. Identical inputs always embed
    identically, which is all the pipeline's cosine machinery needs."""

    def __init__(self, dim: int = 32):
        self.dim = dim

    def embed(self, kind: str, inputs: list[str]) -> list[list[float]]:
        out = []
        for text in inputs:
            digest = hashlib.sha256(f"{kind}\x1f{text}".encode("utf-8")).digest()
            seed = int.from_bytes(digest[:8], "big")
            rng = np.random.default_rng(seed)
            vec = rng.standard_normal(self.dim)
            vec = vec / np.linalg.norm(vec)
            out.append([float(x) for x in vec])
        return out


class RecordedEmbeddings:
    """Replays embeddings from a JSON store {kind: {input: vector}}; unknown
    inputs optionally fall back to a wrapped embedder (and are recorded)."""

    def __init__(self, store: Optional[dict] = None, fallback=None):
        self.store: dict[str, dict[str, list[float]]] = store or {}
        self.fallback = fallback

    @classmethod
    def load(cls, path, fallback=None) -> "RecordedEmbeddings":
        store = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(store=store, fallback=fallback)

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps(self.store, ensure_ascii=False, sort_keys=True),
            encoding="utf-8",
        )

    def embed(self, kind: str, inputs: list[str]) -> list[list[float]]:
        bucket = self.store.setdefault(kind, {})
        missing = [t for t in inputs if t not in bucket]
        if missing:
            if self.fallback is None:
                raise EmbeddingError(
                    f"no recorded embedding for {missing[0]!r} (kind {kind})"
                )
            for text, vec in zip(missing, self.fallback.embed(kind, missing)):
                bucket[text] = vec
        return [bucket[t] for t in inputs]
