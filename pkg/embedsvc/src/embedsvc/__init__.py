"""Embedding HTTP service with a fixed JSON contract.

POST /v1/embed maps a batch of texts or base64 images to unit-normalized
vectors; GET /v1/health reports the loaded models. The default backend is a
deterministic hash embedder so the service runs with no model downloads.
"""

from .app import build_app
from .backends import DeterministicBackend, EmbedBackend

__all__ = ["build_app", "DeterministicBackend", "EmbedBackend"]
