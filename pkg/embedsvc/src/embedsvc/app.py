"""FastAPI application exposing the embedding contract.

POST /v1/embed  {"kind": "sentence"|"clip-text"|"clip-image", "inputs": [...]}
                -> {"vectors": [[...]], "dim": N, "model_id": "..."}
GET  /v1/health -> {"status": "ok"|"degraded", "models": {kind: model_id|null}}

Errors: 400 malformed request, 401 bad shared-secret token, 413 batch too
large, 500 backend failure. Vectors are unit-normalized server-side and
returned in input order.
"""

from __future__ import annotations

import base64
import binascii
import io
import os
from typing import Optional

from fastapi import FastAPI, Header, Request
from fastapi.responses import JSONResponse
from PIL import Image, UnidentifiedImageError
from pydantic import BaseModel

from .backends import BackendError, EmbedBackend, default_models

KINDS = ("sentence", "clip-text", "clip-image")
DEFAULT_MAX_BATCH = 256


class EmbedRequest(BaseModel):
    kind: str
    inputs: list[str]


class EmbedResponse(BaseModel):
    vectors: list[list[float]]
    dim: int
    model_id: str


def _decode_image(payload: str) -> bytes:
    try:
        raw = base64.b64decode(payload, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ValueError(f"invalid base64 image payload: {exc}") from exc
    try:
        with Image.open(io.BytesIO(raw)) as image:
            image.verify()
    except (UnidentifiedImageError, OSError) as exc:
        raise ValueError(f"payload is not a decodable image: {exc}") from exc
    return raw


def build_app(
    models: Optional[dict[str, Optional[EmbedBackend]]] = None,
    max_batch: Optional[int] = None,
    api_token: Optional[str] = None,
) -> FastAPI:
    """Construct the service. ``models`` maps each kind to a backend (None
    marks a configured-but-unavailable model, reported as degraded).
    Defaults come from the environment: EMBEDSVC_SENTENCE_MODEL,
    EMBEDSVC_CLIP_MODEL, EMBEDSVC_MAX_BATCH, EMBEDSVC_TOKEN."""
    if models is None:
        models = dict(
            default_models(
                os.environ.get("EMBEDSVC_SENTENCE_MODEL", "all-MiniLM-L6-v2"),
                os.environ.get("EMBEDSVC_CLIP_MODEL", "clip-vit-base-patch32"),
            )
        )
    if max_batch is None:
        max_batch = int(os.environ.get("EMBEDSVC_MAX_BATCH", DEFAULT_MAX_BATCH))
    if api_token is None:
        api_token = os.environ.get("EMBEDSVC_TOKEN") or None

    app = FastAPI(title="embedsvc")

    def error(status: int, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"error": message})

    @app.post("/v1/embed")
    async def embed(
        request: Request,
        x_embed_token: Optional[str] = Header(default=None),
    ):
        if api_token is not None and x_embed_token != api_token:
            return error(401, "missing or invalid X-Embed-Token")
        try:
            body = EmbedRequest.model_validate(await request.json())
        except Exception as exc:
            return error(400, f"malformed request: {exc}")
        if body.kind not in KINDS:
            return error(400, f"unknown kind {body.kind!r}; expected one of {KINDS}")
        if not body.inputs:
            return error(400, "inputs must be non-empty")
        if len(body.inputs) > max_batch:
            return error(413, f"batch of {len(body.inputs)} exceeds limit {max_batch}")
        backend = models.get(body.kind)
        if backend is None:
            return error(500, f"model for kind {body.kind!r} is unavailable")

        if body.kind == "clip-image":
            try:
                prepared = [_decode_image(p) for p in body.inputs]
            except ValueError as exc:
                return error(400, str(exc))
        else:
            prepared = list(body.inputs)

        try:
            vectors = backend.embed(prepared)
        except BackendError as exc:
            return error(500, f"embedding failed: {exc}")
        return EmbedResponse(
            vectors=vectors, dim=backend.dim, model_id=backend.model_id
        )

    @app.get("/v1/health")
    async def health():
        missing = sorted(kind for kind in KINDS if models.get(kind) is None)
        payload = {
            "status": "degraded" if missing else "ok",
            "models": {
                kind: (models[kind].model_id if models.get(kind) else None)
                for kind in KINDS
            },
        }
        if missing:
            payload["missing"] = missing
        return payload

    return app


app = build_app()
