import dataclasses
import json
import random

from crossqa.augment import (
    TYPE_NAME_RE,
    augment_graph,
    compose_image_caption,
    compose_object_caption,
    generate_text_edges,
    generate_text_nodes,
)
from crossqa.graph import TEXTUAL, VISUAL
from tests.conftest import make_graph, scripted_gateway, stub_gateway  # noqa: F401


def one_object_graph():
    return make_graph(
        nodes=[("v0", "bicycle", VISUAL, 0, ["red"]),
               ("v1", "wall", VISUAL, 0, [])],
        edges=[("v0", "v1", "leaning on")],
    )


def text_graph():
    return make_graph(
        nodes=[
            ("v0", "bicycle", VISUAL, 0, []),
            ("t1", "shop (Harlan Cycles)", TEXTUAL, None, []),
            ("t2", "year (2005)", TEXTUAL, None, []),
            ("t3", "city (Velden)", TEXTUAL, None, []),
        ],
        edges=[("v0", "t1", "bought from")],
    )


def test_type_name_pattern():
    m = TYPE_NAME_RE.match("research team (Vision Lab)")
    assert m.group("type") == "research team" and m.group("name") == "Vision Lab"
    assert TYPE_NAME_RE.match("no parenthetical") is None


def test_captions_render_from_graph():
    graph = one_object_graph()
    assert compose_image_caption(graph, 0) == "An image showing bicycle, wall."
    assert compose_object_caption(graph, graph.nodes["v0"]) == (
        "a red bicycle leaning on a wall"
    )
    assert compose_object_caption(graph, graph.nodes["v1"]) == (
        "a wall, with a bicycle leaning on it"
    )


def test_valid_triple_adds_node_and_anchor():
    triple = {"subject": "Bicycle", "relation": "purchased from",
              "object": "shop (Harlan Cycles)"}
    gateway, _ = scripted_gateway([json.dumps(triple)])
    graph = make_graph(nodes=[("v0", "bicycle", VISUAL, 0, ["red"])], edges=[])
    out, dropped = generate_text_nodes(
        gateway, graph, random.Random(0), nodes_per_image=1, category_range=(1, 1)
    )
    assert dropped == []
    added = [n for n in out.nodes.values() if n.id not in graph.nodes]
    assert len(added) == 1
    node = added[0]
    assert node.origin == TEXTUAL and node.type_tag == "shop"
    assert node.display_name == "shop (Harlan Cycles)"
    anchors = [e for e in out.edges if e.object_id == node.id]
    assert len(anchors) == 1 and anchors[0].relation == "purchased from"


def test_invalid_triples_dropped_not_fatal():
    bad = [
        json.dumps({"subject": "lamp", "relation": "r", "object": "shop (X)"}),
        json.dumps({"subject": "bicycle", "relation": "r", "object": "no parens"}),
    ]
    gateway, _ = scripted_gateway(bad)
    graph = one_object_graph()
    out, dropped = generate_text_nodes(
        gateway, graph, random.Random(0), nodes_per_image=2, category_range=(1, 1)
    )
    assert len(dropped) == 2
    assert set(out.nodes) == set(graph.nodes)


def test_duplicate_display_name_dropped():
    triple = json.dumps({"subject": "bicycle", "relation": "r",
                         "object": "shop (Harlan Cycles)"})
    gateway, _ = scripted_gateway([triple, triple])
    graph = make_graph(nodes=[("v0", "bicycle", VISUAL, 0, [])], edges=[])
    # Two category templates for the same object return the same triple.
    out, dropped = generate_text_nodes(
        gateway, graph, random.Random(0), nodes_per_image=1, category_range=(2, 2)
    )
    added = [n for n in out.nodes.values() if n.id not in graph.nodes]
    assert len(added) == 1
    assert len(dropped) == 1 and "duplicate" in dropped[0]["reason"]


def test_edge_generation_filters_closed_world():
    triples = [
        {"subject": "shop (Harlan Cycles)", "relation": "founded in", "object": "year (2005)"},
        {"subject": "shop (Harlan Cycles)", "relation": "based in", "object": "city (Velden)"},
        {"subject": "city (Velden)", "relation": "celebrated in", "object": "year (2005)"},
        {"subject": "year (2005)", "relation": "precedes", "object": "city (Velden)"},
        {"subject": "museum (Unknown)", "relation": "near", "object": "city (Velden)"},
    ]
    gateway, _ = scripted_gateway([json.dumps(triples)])
    graph = text_graph()
    out, dropped = generate_text_edges(gateway, graph)
    assert len(out.edges) == len(graph.edges) + 4
    assert len(dropped) == 1
    # All new edges connect textual nodes only.
    for edge in out.edges[len(graph.edges):]:
        assert out.nodes[edge.subject_id].origin == TEXTUAL
        assert out.nodes[edge.object_id].origin == TEXTUAL


def test_edge_generation_drops_duplicates_and_self():
    triples = [
        {"subject": "shop (Harlan Cycles)", "relation": "founded in", "object": "year (2005)"},
        {"subject": "shop (Harlan Cycles)", "relation": "founded in", "object": "year (2005)"},
        {"subject": "year (2005)", "relation": "equals", "object": "year (2005)"},
    ]
    gateway, _ = scripted_gateway([json.dumps(triples)])
    out, dropped = generate_text_edges(gateway, text_graph())
    assert len(out.edges) == len(text_graph().edges) + 1
    assert len(dropped) == 2


def test_edge_generation_empty_response_unchanged():
    gateway, _ = scripted_gateway(["[]"])
    graph = text_graph()
    out, dropped = generate_text_edges(gateway, graph)
    assert out.to_json_dict() == graph.to_json_dict()
    assert dropped == []


def test_edge_generation_skips_single_entity():
    graph = one_object_graph()
    gateway, provider = scripted_gateway([])
    out, dropped = generate_text_edges(gateway, graph)
    assert provider.calls == []
    assert out is graph


def test_augment_never_mutates_visual_side(stub_gateway):
    graph = one_object_graph()
    before = {nid: dataclasses.asdict(n) for nid, n in graph.nodes.items()}
    out, _ = augment_graph(stub_gateway, graph, random.Random(1))
    for nid, payload in before.items():
        assert dataclasses.asdict(out.nodes[nid]) == payload
    for n in out.nodes.values():
        if n.id not in before:
            assert n.origin == TEXTUAL


def test_augment_deterministic_under_seed(stub_gateway):
    graph = one_object_graph()
    a, _ = augment_graph(stub_gateway, graph, random.Random(9))
    b, _ = augment_graph(stub_gateway, graph, random.Random(9))
    assert a.to_json_dict() == b.to_json_dict()
