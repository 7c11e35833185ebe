"""Narrative textual context generation from per-image subgraph views.

One of twelve writing styles is drawn per context. Generated text is checked
against the explicit-image-reference contract: every entity must surface in
the text, and every image-anchored entity must share a sentence with its
image reference. One regeneration is attempted on violation, then the sample
is discarded.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from typing import Optional

from .filters import split_sentences
from .graph import ContentGraph, ContextSubgraph, EntityNode, GraphError
from .llm import Gateway, ParseFailure

STYLES = (
    "Story/Narrative",
    "Newspaper Article",
    "Comedy Sketch",
    "Diary Entry",
    "Poem",
    "Song Lyrics",
    "Documentary Script",
    "Blog Post",
    "Motivational Speech",
    "Promotional Article",
    "Movie Scene Description",
    "Social Media Post",
)


class ContextError(Exception):
    def __init__(self, violations: list[str]):
        super().__init__("; ".join(violations))
        self.violations = violations


def choose_style(rng: random.Random) -> str:
    return rng.choice(STYLES)


def image_phrase_numbered(graph: ContentGraph) -> bool:
    """Multi-image natural-image samples tag entities '(Image N)'; video frame
    sets and single-image samples use the bare '(Image)' tag."""
    return graph.domain == "NI" and graph.image_count > 1


def entity_label(graph: ContentGraph, node: EntityNode) -> str:
    if not node.is_visual():
        return node.display_name
    if image_phrase_numbered(graph):
        return f"{node.name} (Image {node.image_index + 1})"
    return f"{node.name} (Image)"


def match_key(node: EntityNode) -> str:
    """The string whose presence in generated text counts as a mention: the
    parenthetical proper name for typed textual entities, else the bare name."""
    if not node.is_visual():
        m = re.search(r"\(([^()]+)\)\s*$", node.display_name)
        if m:
            return m.group(1).strip()
    return node.name


def serialize_relations(graph: ContentGraph, sub: ContextSubgraph) -> list[dict]:
    out = []
    for i in sub.edge_indices:
        edge = graph.edges[i]
        if edge.is_solo():
            continue
        out.append(
            {
                "subject": entity_label(graph, graph.nodes[edge.subject_id]),
                "relation": edge.relation,
                "object": entity_label(graph, graph.nodes[edge.object_id]),
            }
        )
    return out


def verify_context(text: str, graph: ContentGraph, sub: ContextSubgraph) -> list[str]:
    """Machine-checkable part of the context contract.

    Reports entities missing from the text and image-anchored entities whose
    mentioning sentences never reference their image. Semantic relation
    fidelity is left to the downstream single-modality filter.
    """
    violations = []
    lowered = text.lower()
    sentences = [s.lower() for s in split_sentences(text)]
    numbered = image_phrase_numbered(graph)
    for nid in sub.node_ids:
        node = graph.nodes[nid]
        key = match_key(node).lower()
        if key not in lowered:
            violations.append(f"missing entity: {match_key(node)}")
            continue
        if not node.is_visual():
            continue
        if numbered:
            ref = re.compile(rf"image\s+{node.image_index + 1}\b")
        else:
            ref = re.compile(r"\bimage\b")
        if not any(key in s and ref.search(s) for s in sentences):
            violations.append(f"missing image reference for entity: {node.name}")
    return violations


def generate_context(
    gateway: Gateway,
    graph: ContentGraph,
    sub: ContextSubgraph,
    style: str,
    max_attempts: int = 2,
) -> str:
    """Generate and verify one context; one regeneration before giving up."""
    if style not in STYLES:
        raise GraphError(f"unknown context style {style!r}")
    relations = serialize_relations(graph, sub)
    if not relations:
        raise GraphError("context subgraph has no relations to narrate")
    entities = [entity_label(graph, graph.nodes[nid]) for nid in sub.node_ids]
    bindings = {
        "context_type": style,
        "entities": json.dumps(entities, ensure_ascii=False),
        "relations": json.dumps(relations, ensure_ascii=False),
    }
    last_violations: list[str] = []
    for _ in range(max_attempts):
        exchange = gateway.exchange("context_generation", bindings)
        text = exchange.parsed_payload
        if isinstance(text, ParseFailure):
            last_violations = [text.reason]
            continue
        last_violations = verify_context(text, graph, sub)
        if not last_violations:
            return text
    raise ContextError(last_violations)


@dataclass
class GeneratedContext:
    image_index: Optional[int]
    style: str
    text: str

    def to_json_dict(self) -> dict:
        return {"image_index": self.image_index, "style": self.style, "text": self.text}
