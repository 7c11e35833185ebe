"""Embedding backends.

Every backend maps a list of already-validated inputs to unit-normalized
vectors. The deterministic backend derives each vector from a content hash,
so identical inputs always produce identical vectors and the service can run
without any model weights.
"""

from __future__ import annotations

import hashlib
from typing import Protocol, Sequence

import numpy as np


class BackendError(Exception):
    """Raised when a backend cannot produce embeddings (HTTP 500)."""


class EmbedBackend(Protocol):
    model_id: str
    dim: int

    def embed(self, inputs: Sequence[str | bytes]) -> list[list[float]]: ...


class DeterministicBackend:
    """Hash-seeded pseudo-random unit vectors.

    Text inputs hash their UTF-8 bytes; image inputs hash the decoded image
    bytes. The model id is part of the hash so different configured models
    yield different embedding spaces.
    """

    def __init__(self, model_id: str, dim: int = 384):
        self.model_id = model_id
        self.dim = dim

    def embed(self, inputs: Sequence[str | bytes]) -> list[list[float]]:
        out = []
        for item in inputs:
            data = item.encode("utf-8") if isinstance(item, str) else item
            digest = hashlib.sha256(self.model_id.encode("utf-8") + b"\x1f" + data)
            seed = int.from_bytes(digest.digest()[:8], "big")
            rng = np.random.default_rng(seed)
            vec = rng.standard_normal(self.dim)
            norm = np.linalg.norm(vec)
            if norm == 0.0:
                raise BackendError("degenerate zero vector")
            out.append([float(x) for x in vec / norm])
        return out


def default_models(sentence_model: str, clip_model: str) -> dict[str, EmbedBackend]:
    """kind -> backend map used when no custom registry is supplied."""
    sentence = DeterministicBackend(sentence_model, dim=384)
    clip = DeterministicBackend(clip_model, dim=512)
    return {"sentence": sentence, "clip-text": clip, "clip-image": clip}
