"""Multimodal content graphs: merging, unique-entity filtering, context
subgraph extraction, and constrained chain sampling with a brute-force
enumeration oracle.

Graphs are treated as immutable after construction; every operation here is
pure given its inputs and seed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional

from .scene import RawSceneGraph

VISUAL = "visual"
TEXTUAL = "textual"

DOMAIN_HOP_BOUNDS = {"NI": (1, 5), "VF": (1, 5), "SP": (1, 4)}

ANSWER_NAME = "name"
ANSWER_ATTRIBUTE = "attribute"

DEFAULT_ORACLE_NODE_LIMIT = 12
DEFAULT_SAMPLE_ATTEMPTS = 200


class GraphError(Exception):
    pass


@dataclass
class EntityNode:
    id: str
    name: str
    display_name: str
    origin: str  # VISUAL or TEXTUAL
    image_index: Optional[int] = None
    attributes: list[str] = field(default_factory=list)
    type_tag: Optional[str] = None
    provenance: Optional[dict] = None

    def is_visual(self) -> bool:
        return self.origin == VISUAL


@dataclass
class RelationEdge:
    subject_id: str
    object_id: Optional[str]  # None for solo actions (video domain)
    relation: str
    image_tag: Optional[int] = None
    figure_label: Optional[str] = None
    sentence_indices: Optional[list[int]] = None
    provenance: Optional[dict] = None

    def is_solo(self) -> bool:
        return self.object_id is None

    def endpoints(self) -> tuple[str, ...]:
        if self.object_id is None:
            return (self.subject_id,)
        return (self.subject_id, self.object_id)


@dataclass
class ContentGraph:
    nodes: dict[str, EntityNode]
    edges: list[RelationEdge]
    image_count: int
    domain: str  # NI | VF | SP

    def node(self, node_id: str) -> EntityNode:
        return self.nodes[node_id]

    def visual_nodes(self) -> list[EntityNode]:
        return [n for n in self.nodes.values() if n.is_visual()]

    def textual_nodes(self) -> list[EntityNode]:
        return [n for n in self.nodes.values() if not n.is_visual()]

    def incident_edges(self, node_id: str) -> list[int]:
        return [i for i, e in enumerate(self.edges) if node_id in e.endpoints()]

    def validate(self) -> None:
        seen_ids = set()
        seen_names = set()
        for node in self.nodes.values():
            if node.id in seen_ids:
                raise GraphError(f"duplicate node id {node.id}")
            if node.display_name in seen_names:
                raise GraphError(f"duplicate display_name {node.display_name}")
            seen_ids.add(node.id)
            seen_names.add(node.display_name)
            if node.is_visual():
                if node.image_index is None or not (0 <= node.image_index < self.image_count):
                    raise GraphError(f"visual node {node.id} has bad image_index")
                if node.type_tag is not None:
                    raise GraphError(f"visual node {node.id} carries type_tag")
            elif node.image_index is not None:
                raise GraphError(f"textual node {node.id} carries image_index")
        for edge in self.edges:
            for nid in edge.endpoints():
                if nid not in self.nodes:
                    raise GraphError(f"edge references missing node {nid}")
            if edge.figure_label is not None and not edge.sentence_indices:
                raise GraphError("figure_label requires sentence_indices")
        if self.domain == "NI" and not (1 <= self.image_count <= 6):
            raise GraphError(f"NI image_count {self.image_count} out of range")

    def to_json_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "id": n.id,
                    "name": n.name,
                    "display_name": n.display_name,
                    "origin": n.origin,
                    "image_index": n.image_index,
                    "attributes": list(n.attributes),
                    "type_tag": n.type_tag,
                    **({"provenance": n.provenance} if n.provenance else {}),
                }
                for n in self.nodes.values()
            ],
            "edges": [
                {
                    "subject_id": e.subject_id,
                    "object_id": e.object_id,
                    "relation": e.relation,
                    "image_tag": e.image_tag,
                    "figure_label": e.figure_label,
                    "sentence_indices": e.sentence_indices,
                    **({"provenance": e.provenance} if e.provenance else {}),
                }
                for e in self.edges
            ],
            "image_count": self.image_count,
            "domain": self.domain,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ContentGraph":
        nodes = {}
        for raw in payload["nodes"]:
            node = EntityNode(
                id=raw["id"],
                name=raw["name"],
                display_name=raw["display_name"],
                origin=raw["origin"],
                image_index=raw.get("image_index"),
                attributes=list(raw.get("attributes", [])),
                type_tag=raw.get("type_tag"),
                provenance=raw.get("provenance"),
            )
            nodes[node.id] = node
        edges = [
            RelationEdge(
                subject_id=raw["subject_id"],
                object_id=raw.get("object_id"),
                relation=raw["relation"],
                image_tag=raw.get("image_tag"),
                figure_label=raw.get("figure_label"),
                sentence_indices=raw.get("sentence_indices"),
                provenance=raw.get("provenance"),
            )
            for raw in payload["edges"]
        ]
        graph = cls(
            nodes=nodes,
            edges=edges,
            image_count=payload["image_count"],
            domain=payload["domain"],
        )
        graph.validate()
        return graph


@dataclass
class ChainSubgraph:
    """An ordered path of edges; the substrate of one QA pair.

    ``edge_indices`` index into the source graph's edge list. The path node
    sequence ends at ``answer_node_id`` which must be a visual node. A solo
    edge (no object) may appear only in final position; it keeps the path
    property because it shares its single endpoint with the previous edge.
    """

    edge_indices: tuple[int, ...]
    node_sequence: tuple[str, ...]  # path nodes in order; last is the terminal
    answer_node_id: str
    hop_count: int
    answer_kind: Optional[str] = None  # ANSWER_NAME | ANSWER_ATTRIBUTE
    answer_value: Optional[str] = None

    def identity(self) -> tuple:
        return (self.edge_indices, self.answer_node_id)

    def edges(self, graph: ContentGraph) -> list[RelationEdge]:
        return [graph.edges[i] for i in self.edge_indices]

    def node_ids(self) -> set[str]:
        return set(self.node_sequence)

    def intermediate_node_ids(self) -> set[str]:
        # All path nodes except the head (given) and the terminal (answer).
        if len(self.node_sequence) <= 2:
            return set()
        return set(self.node_sequence[1:-1])


def validate_chain(chain: ChainSubgraph, graph: ContentGraph) -> list[str]:
    """Structural re-validation; returns a list of violations (empty if valid)."""
    violations = []
    lo, hi = DOMAIN_HOP_BOUNDS[graph.domain]
    h = chain.hop_count
    if not (lo <= h <= hi):
        violations.append(f"hop count {h} outside [{lo},{hi}] for {graph.domain}")
    if len(chain.edge_indices) != h:
        violations.append("edge count does not match hop_count")
    edges = chain.edges(graph)
    for i, edge in enumerate(edges):
        if edge.is_solo() and i != len(edges) - 1:
            violations.append("solo edge in non-final position")
    # Path structure against the recorded node sequence.
    seq = chain.node_sequence
    if len(set(seq)) != len(seq):
        violations.append("repeated node in path")
    expected_nodes = len(edges) + 1 - (1 if edges and edges[-1].is_solo() else 0)
    if len(seq) != expected_nodes:
        violations.append("node sequence length inconsistent with edges")
    else:
        for i, edge in enumerate(edges):
            if edge.is_solo():
                if set(edge.endpoints()) != {seq[-1]}:
                    violations.append(f"solo edge {i} not anchored at terminal")
            elif set(edge.endpoints()) != {seq[i], seq[i + 1]}:
                violations.append(f"edge {i} does not connect consecutive path nodes")
    if chain.answer_node_id != seq[-1]:
        violations.append("answer node is not the last path node")
    terminal = graph.nodes.get(chain.answer_node_id)
    if terminal is None or not terminal.is_visual():
        violations.append("terminal node is not visual")
    origins = {graph.nodes[n].origin for n in seq if n in graph.nodes}
    if origins != {VISUAL, TEXTUAL}:
        violations.append("chain does not span both modalities")
    if h == 1 and chain.answer_kind not in (None, ANSWER_ATTRIBUTE):
        violations.append("h=1 chain must answer with an attribute")
    if h == 1 and terminal is not None and not terminal.attributes:
        violations.append("h=1 terminal has no attribute")
    if edges and edges[-1].is_solo() and chain.answer_kind == ANSWER_NAME:
        violations.append("solo final edge requires an attribute-style answer")
    return violations


# ---------------------------------------------------------------------------
# Merging and subscripting


def merge_scene_graphs(graphs: list[RawSceneGraph]) -> ContentGraph:
    """Merge per-image scene graphs into one content graph.

    Visual nodes get image_index by input position; duplicate names get
    numeric subscripts in first-seen order, names without duplicates keep
    their bare name. No edges span images at this stage.
    """
    if not graphs:
        raise GraphError("empty input list")
    if len(graphs) > 6:
        raise GraphError("at most six images per sample")
    for idx, g in enumerate(graphs):
        if g.dangling_targets():
            raise GraphError(f"input graph {idx} has unresolved relation targets")

    # First pass: name frequencies across the whole merge.
    counts: dict[str, int] = {}
    for g in graphs:
        for obj in g.objects.values():
            counts[obj.name] = counts.get(obj.name, 0) + 1

    nodes: dict[str, EntityNode] = {}
    edges: list[RelationEdge] = []
    seen: dict[str, int] = {}
    for idx, g in enumerate(graphs):
        for oid, obj in g.objects.items():
            node_id = f"i{idx}:{oid}"
            if counts[obj.name] > 1:
                seen[obj.name] = seen.get(obj.name, 0) + 1
                display = f"{obj.name}_{seen[obj.name]}"
            else:
                display = obj.name
            nodes[node_id] = EntityNode(
                id=node_id,
                name=obj.name,
                display_name=display,
                origin=VISUAL,
                image_index=idx,
                attributes=list(obj.attributes),
            )
        for oid, obj in g.objects.items():
            for rel in obj.relations:
                edges.append(
                    RelationEdge(
                        subject_id=f"i{idx}:{oid}",
                        object_id=f"i{idx}:{rel.target_object_id}",
                        relation=rel.relation,
                        image_tag=idx,
                    )
                )
    graph = ContentGraph(nodes=nodes, edges=edges, image_count=len(graphs), domain="NI")
    graph.validate()
    return graph


# ---------------------------------------------------------------------------
# Unique-entity filtering


def _relation_pairs(scene: RawSceneGraph, oid: str, alive: set[str]) -> set[tuple[str, str]]:
    """(relation, neighbor-name) pairs for an object, both edge directions,
    counting only neighbors still retained."""
    pairs = set()
    for rel in scene.objects[oid].relations:
        if rel.target_object_id in alive:
            pairs.add((rel.relation, scene.objects[rel.target_object_id].name))
    for other_id, other in scene.objects.items():
        if other_id == oid or other_id not in alive:
            continue
        for rel in other.relations:
            if rel.target_object_id == oid:
                pairs.add((f"~{rel.relation}", other.name))
    return pairs


def filter_unique_entities(scene: RawSceneGraph) -> RawSceneGraph:
    graph, _ = filter_unique_entities_with_discriminators(scene)
    return graph


def filter_unique_entities_with_discriminators(
    scene: RawSceneGraph,
) -> tuple[RawSceneGraph, dict[str, str]]:
    """Retain entities that are uniquely identifiable within their image.

    Name-unique entities are kept. Duplicated-name entities are kept iff they
    hold an attribute value or a (relation, neighbor-name) pair held by no
    same-name sibling; discriminators are checked only against retained
    neighbors, so removal iterates to a fixpoint. Dropped entities lose their
    incident edges. Returns the filtered scene and the discriminator recorded
    for each retained duplicate.
    """
    alive = set(scene.objects)
    name_groups: dict[str, list[str]] = {}
    for oid, obj in scene.objects.items():
        name_groups.setdefault(obj.name, []).append(oid)

    discriminators: dict[str, str] = {}
    changed = True
    while changed:
        changed = False
        for name, group in name_groups.items():
            members = [oid for oid in group if oid in alive]
            if len(members) <= 1:
                continue
            for oid in members:
                attrs = set(scene.objects[oid].attributes)
                sibling_attrs = set()
                for sib in members:
                    if sib != oid:
                        sibling_attrs.update(scene.objects[sib].attributes)
                unique_attrs = attrs - sibling_attrs
                if unique_attrs:
                    discriminators[oid] = f"attribute:{sorted(unique_attrs)[0]}"
                    continue
                pairs = _relation_pairs(scene, oid, alive)
                sibling_pairs = set()
                for sib in members:
                    if sib != oid:
                        sibling_pairs.update(_relation_pairs(scene, sib, alive))
                unique_pairs = pairs - sibling_pairs
                if unique_pairs:
                    rel, neigh = sorted(unique_pairs)[0]
                    discriminators[oid] = f"relation:{rel}:{neigh}"
                    continue
                alive.discard(oid)
                discriminators.pop(oid, None)
                changed = True

    objects = {}
    for oid in scene.objects:
        if oid not in alive:
            continue
        obj = scene.objects[oid]
        objects[oid] = type(obj)(
            name=obj.name,
            attributes=list(obj.attributes),
            relations=[r for r in obj.relations if r.target_object_id in alive],
        )
    return (
        RawSceneGraph(image_id=scene.image_id, objects=objects),
        {oid: disc for oid, disc in discriminators.items() if oid in alive},
    )


# ---------------------------------------------------------------------------
# Context subgraph extraction


def text_anchor_edge(graph: ContentGraph, text_node_id: str) -> Optional[int]:
    """Index of the visual->textual anchor edge of a textual node, if any."""
    for i, edge in enumerate(graph.edges):
        if edge.object_id == text_node_id and graph.nodes[edge.subject_id].is_visual():
            return i
    return None


def text_home_image(graph: ContentGraph, text_node_id: str) -> Optional[int]:
    anchor = text_anchor_edge(graph, text_node_id)
    if anchor is None:
        return None
    return graph.nodes[graph.edges[anchor].subject_id].image_index


def cross_image_text_edges(graph: ContentGraph) -> list[int]:
    """Indices of text-text edges whose endpoints anchor to different images."""
    out = []
    for i, edge in enumerate(graph.edges):
        if edge.is_solo():
            continue
        a, b = graph.nodes[edge.subject_id], graph.nodes[edge.object_id]
        if a.is_visual() or b.is_visual():
            continue
        ia, ib = text_home_image(graph, a.id), text_home_image(graph, b.id)
        if ia is not None and ib is not None and ia != ib:
            out.append(i)
    return out


def assign_cross_image_edges(graph: ContentGraph, rng: random.Random) -> dict[int, int]:
    """Uniformly assign each cross-image text-text edge to one of its two images."""
    assignment = {}
    for i in cross_image_text_edges(graph):
        edge = graph.edges[i]
        ia = text_home_image(graph, edge.subject_id)
        ib = text_home_image(graph, edge.object_id)
        assignment[i] = rng.choice([ia, ib])
    return assignment


@dataclass
class ContextSubgraph:
    """Per-image view used to generate textual context.

    Visual-node attributes and inter-image visual relations are excluded;
    those must be inferred from the image during cross-modal reasoning.
    """

    image_index: Optional[int]  # None for the whole-set view (video domain)
    node_ids: list[str]
    edge_indices: list[int]


def extract_context_subgraph(
    graph: ContentGraph,
    image_index: int,
    edge_assignment: dict[int, int],
) -> ContextSubgraph:
    if not (0 <= image_index < graph.image_count):
        raise GraphError(f"image_index {image_index} out of range")
    cross = set(cross_image_text_edges(graph))
    missing = cross - set(edge_assignment)
    if missing:
        raise GraphError(f"unassigned cross-image edges: {sorted(missing)}")

    node_ids: list[str] = []
    edge_indices: list[int] = []

    def add_node(nid: str) -> None:
        if nid not in node_ids:
            node_ids.append(nid)

    for node in graph.nodes.values():
        if node.is_visual() and node.image_index == image_index:
            add_node(node.id)
    visual_here = set(node_ids)

    # Text nodes anchored to this image plus their anchor edges.
    for i, edge in enumerate(graph.edges):
        if edge.is_solo():
            continue
        subj, obj = graph.nodes[edge.subject_id], graph.nodes[edge.object_id]
        if subj.id in visual_here and not obj.is_visual():
            add_node(obj.id)
            edge_indices.append(i)
    local_text = {nid for nid in node_ids if not graph.nodes[nid].is_visual()}

    # Edges among this image's text nodes, plus assigned cross-image edges.
    for i, edge in enumerate(graph.edges):
        if edge.is_solo() or i in edge_indices:
            continue
        subj, obj = graph.nodes[edge.subject_id], graph.nodes[edge.object_id]
        if subj.is_visual() or obj.is_visual():
            continue
        if i in cross:
            if edge_assignment[i] != image_index:
                continue
            for nid in (subj.id, obj.id):
                if nid not in local_text:
                    # Foreign endpoint: pull it in with its own anchor edge.
                    add_node(nid)
                    anchor = text_anchor_edge(graph, nid)
                    if anchor is not None:
                        anchor_visual = graph.edges[anchor].subject_id
                        add_node(anchor_visual)
                        if anchor not in edge_indices:
                            edge_indices.append(anchor)
            edge_indices.append(i)
        elif subj.id in local_text and obj.id in local_text:
            edge_indices.append(i)

    return ContextSubgraph(image_index=image_index, node_ids=node_ids, edge_indices=edge_indices)


def extract_full_context_view(graph: ContentGraph) -> ContextSubgraph:
    """Whole-set view: all visual nodes, all anchored text nodes, text-text
    edges, and anchor edges. Used when context is generated once for the
    entire image set (video domain)."""
    node_ids = [n.id for n in graph.nodes.values() if n.is_visual()]
    edge_indices = []
    for i, edge in enumerate(graph.edges):
        if edge.is_solo():
            continue
        subj, obj = graph.nodes[edge.subject_id], graph.nodes[edge.object_id]
        if subj.is_visual() and obj.is_visual():
            continue  # visual relations stay in the pixels
        if subj.is_visual() or obj.is_visual():
            edge_indices.append(i)  # anchor edge
        else:
            edge_indices.append(i)
        for nid in edge.endpoints():
            if nid not in node_ids:
                node_ids.append(nid)
    return ContextSubgraph(image_index=None, node_ids=node_ids, edge_indices=edge_indices)


# ---------------------------------------------------------------------------
# Chain sampling and enumeration


def _adjacency(graph: ContentGraph) -> dict[str, list[tuple[int, str]]]:
    """node id -> [(edge index, other endpoint id)] over non-solo edges."""
    adj: dict[str, list[tuple[int, str]]] = {nid: [] for nid in graph.nodes}
    for i, edge in enumerate(graph.edges):
        if edge.is_solo():
            continue
        if edge.subject_id == edge.object_id:
            continue  # self loops cannot extend a simple path
        adj[edge.subject_id].append((i, edge.object_id))
        adj[edge.object_id].append((i, edge.subject_id))
    return adj


def _solo_edges(graph: ContentGraph) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {}
    for i, edge in enumerate(graph.edges):
        if edge.is_solo():
            out.setdefault(edge.subject_id, []).append(i)
    return out


def _chain_ok(graph: ContentGraph, seq: list[str], h: int) -> bool:
    origins = {graph.nodes[n].origin for n in seq}
    if origins != {VISUAL, TEXTUAL}:
        return False
    terminal = graph.nodes[seq[-1]]
    if h == 1 and not terminal.attributes:
        return False
    return True


def sample_chain(
    graph: ContentGraph,
    h: int,
    rng_seed: int,
    answer_attribute_prob: float = 0.5,
    max_attempts: int = DEFAULT_SAMPLE_ATTEMPTS,
) -> Optional[ChainSubgraph]:
    """Rejection-sample a chain of h edges, walking backward from a uniformly
    chosen eligible terminal visual node. Returns None after max_attempts.
    """
    lo, hi = DOMAIN_HOP_BOUNDS[graph.domain]
    if not (lo <= h <= hi):
        raise GraphError(f"h={h} outside domain bounds [{lo},{hi}]")
    rng = random.Random(rng_seed)
    adj = _adjacency(graph)
    solos = _solo_edges(graph)
    terminals = [
        n.id
        for n in graph.visual_nodes()
        if h > 1 or n.attributes  # h=1 requires an attribute answer
    ]
    if not terminals:
        return None

    for _ in range(max_attempts):
        terminal = rng.choice(terminals)
        edge_rev: list[int] = []
        seq_rev = [terminal]
        # Optionally end the chain with a solo action on the terminal.
        solo_choices = solos.get(terminal, [])
        use_solo = bool(solo_choices) and h > 1 and rng.random() < 0.5
        if use_solo:
            edge_rev.append(rng.choice(solo_choices))
        steps_needed = h - (1 if use_solo else 0)
        ok = True
        for _ in range(steps_needed):
            options = [
                (ei, other)
                for ei, other in adj[seq_rev[-1]]
                if other not in seq_rev and ei not in edge_rev
            ]
            if not options:
                ok = False
                break
            ei, other = rng.choice(options)
            edge_rev.append(ei)
            seq_rev.append(other)
        if not ok:
            continue
        seq = list(reversed(seq_rev))
        if not _chain_ok(graph, seq, h):
            continue
        edges = tuple(reversed(edge_rev))
        chain = ChainSubgraph(
            edge_indices=edges,
            node_sequence=tuple(seq),
            answer_node_id=terminal,
            hop_count=h,
        )
        terminal_node = graph.nodes[terminal]
        last_solo = graph.edges[edges[-1]].is_solo()
        if h == 1:
            chain.answer_kind = ANSWER_ATTRIBUTE
        elif last_solo:
            # Solo action answers read like attributes (the action phrase).
            chain.answer_kind = ANSWER_ATTRIBUTE
            chain.answer_value = graph.edges[edges[-1]].relation
        elif terminal_node.attributes and rng.random() < answer_attribute_prob:
            chain.answer_kind = ANSWER_ATTRIBUTE
        else:
            chain.answer_kind = ANSWER_NAME
        return chain
    return None


def enumerate_chains(
    graph: ContentGraph,
    h: int,
    node_limit: int = DEFAULT_ORACLE_NODE_LIMIT,
) -> list[ChainSubgraph]:
    """Exhaustive duplicate-free oracle listing of all valid chains of h edges,
    in canonical order. Intended for graphs of at most node_limit nodes."""
    lo, hi = DOMAIN_HOP_BOUNDS[graph.domain]
    if not (lo <= h <= hi):
        raise GraphError(f"h={h} outside domain bounds [{lo},{hi}]")
    if len(graph.nodes) > node_limit:
        raise GraphError(f"graph exceeds oracle limit of {node_limit} nodes")
    adj = _adjacency(graph)
    solos = _solo_edges(graph)
    results: dict[tuple, ChainSubgraph] = {}

    def backward(seq_rev: list[str], edges_rev: list[int], steps_left: int) -> None:
        if steps_left == 0:
            seq = list(reversed(seq_rev))
            if not _chain_ok(graph, seq, h):
                return
            chain = ChainSubgraph(
                edge_indices=tuple(reversed(edges_rev)),
                node_sequence=tuple(seq),
                answer_node_id=seq[-1],
                hop_count=h,
                answer_kind=ANSWER_ATTRIBUTE if h == 1 else None,
            )
            results.setdefault(chain.identity(), chain)
            return
        for ei, other in adj[seq_rev[-1]]:
            if other in seq_rev or ei in edges_rev:
                continue
            seq_rev.append(other)
            edges_rev.append(ei)
            backward(seq_rev, edges_rev, steps_left - 1)
            seq_rev.pop()
            edges_rev.pop()

    for node in graph.visual_nodes():
        if h == 1 and not node.attributes:
            continue
        backward([node.id], [], h)
        # Variants whose final edge is a solo action on the terminal.
        if h > 1:
            for solo_ei in solos.get(node.id, []):
                backward([node.id], [solo_ei], h - 1)

    return sorted(results.values(), key=lambda c: (c.edge_indices, c.answer_node_id))
