"""Densely-captioned video ingestion.

Per caption, one frame is selected from its time window by embedding
similarity (cosine argmax, ties to the earliest timestamp). The caption set
is then converted in a single LLM exchange to a coreference-resolved scene
graph bundle, validated, and lowered to a content graph where each scene is
one image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .graph import ContentGraph, EntityNode, RelationEdge, VISUAL
from .llm import Gateway, ParseFailure


class VideoIngestError(Exception):
    pass


@dataclass
class TimedCaption:
    text: str
    start_s: float
    end_s: float
    scene_index: int

    def __post_init__(self):
        if self.start_s > self.end_s:
            raise VideoIngestError(
                f"caption {self.scene_index}: start {self.start_s} > end {self.end_s}"
            )


def parse_captions(payload: list[dict]) -> list[TimedCaption]:
    """Caption records keep their given order even when time ranges overlap."""
    captions = []
    for i, raw in enumerate(payload):
        try:
            captions.append(
                TimedCaption(
                    text=str(raw["text"]),
                    start_s=float(raw["start"]),
                    end_s=float(raw["end"]),
                    scene_index=i,
                )
            )
        except KeyError as exc:
            raise VideoIngestError(f"caption {i} missing field {exc}") from exc
    return captions


@dataclass
class Frame:
    timestamp_s: float
    ref: str
    embedding: Sequence[float]


def select_frames(frames: list[Frame], captions: list[TimedCaption],
                  caption_embeddings: list[Sequence[float]]) -> list[int]:
    """Per caption, the index of the in-window frame with the highest cosine
    similarity (embeddings unit-normalized, so a plain dot product). Ties go
    to the earliest timestamp."""
    if len(captions) != len(caption_embeddings):
        raise VideoIngestError("caption/embedding count mismatch")
    if not frames:
        raise VideoIngestError("no candidate frames")
    dims = {len(f.embedding) for f in frames} | {len(e) for e in caption_embeddings}
    if len(dims) != 1:
        raise VideoIngestError(f"embedding dimension mismatch: {sorted(dims)}")

    frame_matrix = np.asarray([f.embedding for f in frames], dtype=float)
    chosen = []
    for caption, emb in zip(captions, caption_embeddings):
        candidates = [
            i for i, f in enumerate(frames)
            if caption.start_s <= f.timestamp_s <= caption.end_s
        ]
        if not candidates:
            raise VideoIngestError(
                f"no frame within [{caption.start_s}, {caption.end_s}] "
                f"for caption {caption.scene_index}"
            )
        scores = frame_matrix[candidates] @ np.asarray(emb, dtype=float)
        best = max(
            range(len(candidates)),
            key=lambda k: (scores[k], -frames[candidates[k]].timestamp_s),
        )
        chosen.append(candidates[best])
    return chosen


# ---------------------------------------------------------------------------
# Caption set -> scene graph bundle -> content graph


def validate_bundle(bundle: dict, n_captions: int) -> list[str]:
    """Structural checks on a caption-to-graph bundle; returns violations."""
    violations = []
    entities = bundle.get("entities", [])
    scenes = bundle.get("scenes", [])

    ids = []
    for ent in entities:
        eid = ent.get("id")
        if not isinstance(eid, str) or not eid.isdigit():
            violations.append(f"entity id {eid!r} is not a stringified integer")
            continue
        ids.append(int(eid))
    if ids and sorted(ids) != list(range(1, len(ids) + 1)):
        violations.append(f"entity ids not contiguous 1..n: {sorted(ids)}")
    if len(set(ids)) != len(ids):
        violations.append("duplicate entity ids")

    if len(scenes) != n_captions:
        violations.append(f"{len(scenes)} scenes for {n_captions} captions")

    known = {str(i) for i in ids}
    for si, scene in enumerate(scenes):
        seen: set[tuple] = set()
        for rel in scene.get("relations", []):
            source, target = rel.get("source"), rel.get("target")
            phrase = rel.get("relation", "")
            if source not in known:
                violations.append(f"scene {si}: unresolved source {source!r}")
            if target is not None and target not in known:
                violations.append(f"scene {si}: unresolved target {target!r}")
            if target is not None:
                if (target, source, phrase) in seen:
                    violations.append(
                        f"scene {si}: inverse-duplicate relation {phrase!r}"
                    )
                seen.add((source, target, phrase))
    return violations


def bundle_to_graph(bundle: dict, n_captions: int) -> ContentGraph:
    """Lower a validated bundle: entities become visual nodes anchored to the
    first scene in which they participate; each scene's relations become
    edges tagged with that scene's image index."""
    name_counts: dict[str, int] = {}
    for ent in bundle["entities"]:
        name_counts[ent["entity"]] = name_counts.get(ent["entity"], 0) + 1

    first_scene: dict[str, int] = {}
    for si, scene in enumerate(bundle["scenes"]):
        for rel in scene.get("relations", []):
            for eid in (rel.get("source"), rel.get("target")):
                if eid is not None and eid not in first_scene:
                    first_scene[eid] = si

    nodes: dict[str, EntityNode] = {}
    seen_names: dict[str, int] = {}
    for ent in bundle["entities"]:
        name = ent["entity"]
        if name_counts[name] > 1:
            seen_names[name] = seen_names.get(name, 0) + 1
            display = f"{name}_{seen_names[name]}"
        else:
            display = name
        node_id = f"v{ent['id']}"
        nodes[node_id] = EntityNode(
            id=node_id,
            name=name,
            display_name=display,
            origin=VISUAL,
            image_index=first_scene.get(ent["id"], 0),
            attributes=[str(a) for a in ent.get("attributes", [])],
        )

    edges = []
    for si, scene in enumerate(bundle["scenes"]):
        for rel in scene.get("relations", []):
            target = rel.get("target")
            edges.append(
                RelationEdge(
                    subject_id=f"v{rel['source']}",
                    object_id=None if target is None else f"v{target}",
                    relation=str(rel["relation"]),
                    image_tag=si,
                )
            )

    graph = ContentGraph(nodes=nodes, edges=edges, image_count=n_captions, domain="VF")
    graph.validate()
    return graph


def captions_to_graph(
    gateway: Gateway, captions: list[TimedCaption], max_attempts: int = 2
) -> tuple[dict, ContentGraph]:
    """One exchange over the full caption list; the bundle is validated and
    the exchange retried once on violation before failing."""
    annotated = json.dumps(
        [
            {"scene": c.scene_index + 1, "start": c.start_s, "end": c.end_s,
             "text": c.text}
            for c in captions
        ],
        ensure_ascii=False,
    )
    last: list[str] = []
    for _ in range(max_attempts):
        exchange = gateway.exchange("caption_to_graph", {"annotated": annotated})
        payload = exchange.parsed_payload
        if isinstance(payload, ParseFailure):
            last = [payload.reason]
            continue
        violations = validate_bundle(payload, len(captions))
        if violations:
            last = violations
            continue
        return payload, bundle_to_graph(payload, len(captions))
    raise VideoIngestError("; ".join(last))
