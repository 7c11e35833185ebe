"""LLM-driven graph augmentation.

Two passes over a merged content graph: first, textual entities are generated
and attached to selected visual nodes; second, relations are generated among
the new textual entities. Both passes validate every returned triple and drop
the invalid ones, so the graph invariants survive arbitrary model output.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import replace
from typing import Optional

from .graph import ContentGraph, EntityNode, GraphError, RelationEdge, TEXTUAL
from .llm import Gateway, ParseFailure, TEXT_NODE_TEMPLATES

TYPE_NAME_RE = re.compile(r"^(?P<type>[^()]+?)\s*\((?P<name>[^()]+)\)$")

DEFAULT_NODES_PER_IMAGE = 4
DEFAULT_CATEGORY_RANGE = (1, 2)


def compose_image_caption(graph: ContentGraph, image_index: int) -> str:
    names = [n.name for n in graph.visual_nodes() if n.image_index == image_index]
    if not names:
        return "An image."
    return "An image showing " + ", ".join(names) + "."


def compose_object_caption(graph: ContentGraph, node: EntityNode) -> str:
    """Short object description rendered from the scene graph itself."""
    attrs = " ".join(node.attributes)
    head = f"a {attrs} {node.name}".replace("  ", " ") if attrs else f"a {node.name}"
    for edge in graph.edges:
        if edge.is_solo():
            continue
        if edge.subject_id == node.id:
            other = graph.nodes[edge.object_id]
            return f"{head} {edge.relation} a {other.name}"
        if edge.object_id == node.id:
            other = graph.nodes[edge.subject_id]
            return f"{head}, with a {other.name} {edge.relation} it"
    return head


def _valid_node_triple(triple, queried_name: str) -> Optional[tuple[str, str, str]]:
    """Returns (relation, type word, full object string), or None if invalid."""
    subject = str(triple.get("subject", "")).strip()
    relation = str(triple.get("relation", "")).strip()
    obj = str(triple.get("object", "")).strip()
    if subject.lower() != queried_name.lower():
        return None
    if not relation:
        return None
    m = TYPE_NAME_RE.match(obj)
    if m is None:
        return None
    return relation, m.group("type").strip(), obj


def generate_text_nodes(
    gateway: Gateway,
    graph: ContentGraph,
    rng: random.Random,
    nodes_per_image: int = DEFAULT_NODES_PER_IMAGE,
    category_range: tuple[int, int] = DEFAULT_CATEGORY_RANGE,
) -> tuple[ContentGraph, list[dict]]:
    """Attach generated textual entities to visual nodes.

    For every image, up to ``nodes_per_image`` visual nodes are selected and
    prompted with 1-2 category templates each. Each validated triple adds one
    textual node (display name in "type (name)" form) plus its anchor edge.
    Returns the augmented graph and a log of dropped triples.
    """
    new_nodes: dict[str, EntityNode] = {}
    new_edges: list[RelationEdge] = []
    dropped: list[dict] = []
    existing_names = {n.display_name for n in graph.nodes.values()}
    counter = 0

    for image_index in range(graph.image_count):
        visuals = sorted(
            (n for n in graph.visual_nodes() if n.image_index == image_index),
            key=lambda n: n.id,
        )
        if not visuals:
            continue
        selected = rng.sample(visuals, min(nodes_per_image, len(visuals)))
        image_caption = compose_image_caption(graph, image_index)
        for node in selected:
            lo, hi = category_range
            k = rng.randint(lo, min(hi, len(TEXT_NODE_TEMPLATES)))
            templates = rng.sample(list(TEXT_NODE_TEMPLATES), k)
            object_caption = compose_object_caption(graph, node)
            for template_id in templates:
                exchange = gateway.exchange(
                    template_id,
                    {
                        "object": node.name,
                        "image_caption": image_caption,
                        "object_caption": object_caption,
                    },
                )
                if isinstance(exchange.parsed_payload, ParseFailure):
                    dropped.append(
                        {"template_id": template_id, "node": node.id,
                         "reason": exchange.parsed_payload.reason}
                    )
                    continue
                checked = _valid_node_triple(exchange.parsed_payload, node.name)
                if checked is None:
                    dropped.append(
                        {"template_id": template_id, "node": node.id,
                         "reason": "triple failed structural validation",
                         "triple": exchange.parsed_payload}
                    )
                    continue
                relation, type_word, obj = checked
                if obj in existing_names:
                    dropped.append(
                        {"template_id": template_id, "node": node.id,
                         "reason": f"duplicate display name {obj!r}"}
                    )
                    continue
                counter += 1
                node_id = f"t{counter}"
                new_nodes[node_id] = EntityNode(
                    id=node_id,
                    name=obj,
                    display_name=obj,
                    origin=TEXTUAL,
                    attributes=[],
                    type_tag=type_word,
                    provenance={"template_id": template_id},
                )
                new_edges.append(
                    RelationEdge(
                        subject_id=node.id,
                        object_id=node_id,
                        relation=relation,
                        provenance={"template_id": template_id},
                    )
                )
                existing_names.add(obj)

    augmented = ContentGraph(
        nodes={**graph.nodes, **new_nodes},
        edges=list(graph.edges) + new_edges,
        image_count=graph.image_count,
        domain=graph.domain,
    )
    augmented.validate()
    return augmented, dropped


def generate_text_edges(
    gateway: Gateway, graph: ContentGraph
) -> tuple[ContentGraph, list[dict]]:
    """Generate relations among the textual entities.

    The prompt receives the closed list of textual display names; returned
    triples referencing anything outside that list, self-relations, and
    duplicates are dropped. An empty response leaves the graph unchanged.
    """
    entities = [n.display_name for n in graph.textual_nodes()]
    if len(entities) < 2:
        return graph, []
    by_name = {n.display_name: n.id for n in graph.textual_nodes()}
    existing = {
        (e.subject_id, e.object_id, e.relation)
        for e in graph.edges
        if not e.is_solo()
    }

    exchange = gateway.exchange(
        "edge_generation", {"list_of_entities": json.dumps(entities)}
    )
    if isinstance(exchange.parsed_payload, ParseFailure):
        raise GraphError(f"edge generation failed: {exchange.parsed_payload.reason}")

    new_edges: list[RelationEdge] = []
    dropped: list[dict] = []
    for triple in exchange.parsed_payload:
        subject = str(triple.get("subject", "")).strip()
        obj = str(triple.get("object", "")).strip()
        relation = str(triple.get("relation", "")).strip()
        if subject not in by_name or obj not in by_name or subject == obj or not relation:
            dropped.append({"reason": "outside closed world or degenerate", "triple": triple})
            continue
        key = (by_name[subject], by_name[obj], relation)
        if key in existing:
            dropped.append({"reason": "duplicate edge", "triple": triple})
            continue
        existing.add(key)
        new_edges.append(
            RelationEdge(
                subject_id=by_name[subject],
                object_id=by_name[obj],
                relation=relation,
                provenance={"template_id": "edge_generation"},
            )
        )

    augmented = ContentGraph(
        nodes=dict(graph.nodes),
        edges=list(graph.edges) + new_edges,
        image_count=graph.image_count,
        domain=graph.domain,
    )
    augmented.validate()
    return augmented, dropped


def augment_graph(
    gateway: Gateway,
    graph: ContentGraph,
    rng: random.Random,
    nodes_per_image: int = DEFAULT_NODES_PER_IMAGE,
) -> tuple[ContentGraph, list[dict]]:
    """Node generation followed by edge generation, with a combined drop log."""
    with_nodes, dropped = generate_text_nodes(
        gateway, graph, rng, nodes_per_image=nodes_per_image
    )
    with_edges, dropped_edges = generate_text_edges(gateway, with_nodes)
    return with_edges, dropped + dropped_edges
