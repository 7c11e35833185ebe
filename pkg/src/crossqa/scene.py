"""Per-image scene-graph parsing and image-set sampling.

Input files use a minimal GQA-compatible schema: a JSON list of
``{"image_id": ..., "objects": {...}}`` records, or a map from image id to
``{"objects": {...}}``. Each object carries a name, a list of attribute
strings, and a list of ``{"relation", "target_object_id"}`` records whose
targets must resolve within the same image. Converters from other sources
are expected to produce this schema.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Union


class SceneParseError(Exception):
    """Raised when a scene-graph file is malformed; fails the file, not the run."""


@dataclass
class SceneRelation:
    relation: str
    target_object_id: str


@dataclass
class SceneObject:
    name: str
    attributes: list[str] = field(default_factory=list)
    relations: list[SceneRelation] = field(default_factory=list)


@dataclass
class RawSceneGraph:
    image_id: str
    objects: dict[str, SceneObject] = field(default_factory=dict)

    def dangling_targets(self) -> list[tuple[str, str]]:
        """(object_id, missing_target_id) pairs for unresolved relation targets."""
        out = []
        for oid, obj in self.objects.items():
            for rel in obj.relations:
                if rel.target_object_id not in self.objects:
                    out.append((oid, rel.target_object_id))
        return out

    def to_json_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "objects": {
                oid: {
                    "name": obj.name,
                    "attributes": list(obj.attributes),
                    "relations": [
                        {"relation": r.relation, "target_object_id": r.target_object_id}
                        for r in obj.relations
                    ],
                }
                for oid, obj in self.objects.items()
            },
        }


@dataclass
class SceneParseResult:
    graphs: list[RawSceneGraph]
    diagnostics: list[str]


def _parse_object(image_id: str, oid: str, raw: dict) -> SceneObject:
    if not isinstance(raw, dict) or "name" not in raw:
        raise SceneParseError(f"image {image_id}: object {oid} missing 'name'")
    attrs = raw.get("attributes", [])
    rels_raw = raw.get("relations", [])
    if not isinstance(attrs, list) or not isinstance(rels_raw, list):
        raise SceneParseError(f"image {image_id}: object {oid} has malformed fields")
    rels = []
    for r in rels_raw:
        if not isinstance(r, dict) or "relation" not in r or "target_object_id" not in r:
            raise SceneParseError(f"image {image_id}: object {oid} has malformed relation")
        rels.append(SceneRelation(str(r["relation"]), str(r["target_object_id"])))
    return SceneObject(name=str(raw["name"]), attributes=[str(a) for a in attrs], relations=rels)


def parse_scene_payload(payload) -> SceneParseResult:
    """Parse an already-decoded JSON payload into scene graphs."""
    records: list[tuple[str, dict]] = []
    if isinstance(payload, list):
        for rec in payload:
            if not isinstance(rec, dict) or "image_id" not in rec or "objects" not in rec:
                raise SceneParseError("list records need 'image_id' and 'objects'")
            records.append((str(rec["image_id"]), rec["objects"]))
    elif isinstance(payload, dict):
        for image_id, rec in payload.items():
            if not isinstance(rec, dict) or "objects" not in rec:
                raise SceneParseError(f"image {image_id}: record needs 'objects'")
            records.append((str(image_id), rec["objects"]))
    else:
        raise SceneParseError("top-level value must be a list or object")

    graphs = []
    diagnostics = []
    for image_id, objects_raw in records:
        if not isinstance(objects_raw, dict):
            raise SceneParseError(f"image {image_id}: 'objects' must be a map")
        objects = {
            str(oid): _parse_object(image_id, str(oid), raw)
            for oid, raw in objects_raw.items()
        }
        graph = RawSceneGraph(image_id=image_id, objects=objects)
        for oid, target in graph.dangling_targets():
            diagnostics.append(
                f"image {image_id}: object {oid} relation target {target!r} not found"
            )
        graphs.append(graph)
    return SceneParseResult(graphs=graphs, diagnostics=diagnostics)


def parse_scene_file(source: Union[str, Path, IO[str]]) -> SceneParseResult:
    """Parse a scene-graph JSON file (path or open stream)."""
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = Path(source).read_text(encoding="utf-8")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneParseError(f"malformed JSON: {exc}") from exc
    return parse_scene_payload(payload)


def sample_image_sets(
    catalog: list[str],
    rng: random.Random,
    n_sets: int,
    count_range: tuple[int, int] = (1, 6),
) -> list[list[str]]:
    """Draw image-id sets: uniform set size in range, without replacement within a set."""
    if not catalog:
        raise ValueError("catalog is empty")
    lo, hi = count_range
    if lo < 1 or hi < lo:
        raise ValueError(f"invalid count range {count_range}")
    hi = min(hi, len(catalog))
    if lo > len(catalog):
        raise ValueError(f"catalog smaller than minimum set size {lo}")
    sets = []
    for _ in range(n_sets):
        size = rng.randint(lo, hi)
        sets.append(rng.sample(catalog, size))
    return sets
