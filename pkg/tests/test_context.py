import random
from collections import Counter

import pytest

from crossqa.context import (
    ContextError,
    STYLES,
    choose_style,
    entity_label,
    generate_context,
    image_phrase_numbered,
    match_key,
    serialize_relations,
    verify_context,
)
from crossqa.graph import GraphError, TEXTUAL, VISUAL, extract_context_subgraph
from tests.conftest import make_graph, scripted_gateway, stub_gateway  # noqa: F401


def ni_graph(image_count=2):
    return make_graph(
        nodes=[
            ("v0", "apple", VISUAL, 0, ["red"]),
            ("t0", "shop (Harlan Cycles)", TEXTUAL, None, []),
        ],
        edges=[("v0", "t0", "bought from")],
        image_count=image_count,
        domain="NI",
    )


def sub_of(graph, image_index=0):
    return extract_context_subgraph(graph, image_index, {})


def test_label_numbering_rules():
    multi = ni_graph(image_count=2)
    assert image_phrase_numbered(multi)
    assert entity_label(multi, multi.nodes["v0"]) == "apple (Image 1)"

    single = ni_graph(image_count=1)
    assert entity_label(single, single.nodes["v0"]) == "apple (Image)"

    vf = make_graph(
        nodes=[("v0", "woman", VISUAL, 0, [])], edges=[], image_count=3, domain="VF"
    )
    assert not image_phrase_numbered(vf)
    assert entity_label(vf, vf.nodes["v0"]) == "woman (Image)"

    assert entity_label(multi, multi.nodes["t0"]) == "shop (Harlan Cycles)"


def test_match_key_parenthetical():
    graph = ni_graph()
    assert match_key(graph.nodes["t0"]) == "Harlan Cycles"
    assert match_key(graph.nodes["v0"]) == "apple"


def test_serialize_relations_uses_labels():
    graph = ni_graph()
    rels = serialize_relations(graph, sub_of(graph))
    assert rels == [
        {"subject": "apple (Image 1)", "relation": "bought from",
         "object": "shop (Harlan Cycles)"}
    ]


def test_verify_context_clean():
    graph = ni_graph()
    text = "The apple, shown in image 1, was bought from Harlan Cycles."
    assert verify_context(text, graph, sub_of(graph)) == []


def test_verify_context_missing_entity():
    graph = ni_graph()
    violations = verify_context("The apple sits in image 1.", graph, sub_of(graph))
    assert violations == ["missing entity: Harlan Cycles"]


def test_verify_context_image_ref_must_share_sentence():
    graph = ni_graph()
    text = "The apple came from Harlan Cycles. This scene is image 1."
    violations = verify_context(text, graph, sub_of(graph))
    assert violations == ["missing image reference for entity: apple"]


def test_verify_context_wrong_image_number():
    graph = ni_graph()
    text = "The apple, shown in image 2, came from Harlan Cycles."
    assert verify_context(text, graph, sub_of(graph)) != []


def test_verify_context_unnumbered_tag():
    graph = ni_graph(image_count=1)
    text = "The apple in the image came from Harlan Cycles."
    assert verify_context(text, graph, sub_of(graph)) == []


def test_generate_context_regenerates_once():
    graph = ni_graph()
    good = "The apple, shown in image 1, was bought from Harlan Cycles."
    gateway, provider = scripted_gateway(["The apple alone.", good])
    text = generate_context(gateway, graph, sub_of(graph), STYLES[0])
    assert text == good
    assert len(provider.calls) == 2


def test_generate_context_two_failures_raise():
    graph = ni_graph()
    gateway, _ = scripted_gateway(["bad one.", "bad two."])
    with pytest.raises(ContextError) as exc:
        generate_context(gateway, graph, sub_of(graph), STYLES[0])
    assert exc.value.violations


def test_generate_context_unknown_style():
    graph = ni_graph()
    gateway, _ = scripted_gateway([])
    with pytest.raises(GraphError):
        generate_context(gateway, graph, sub_of(graph), "Limerick")


def test_generate_context_requires_relations():
    graph = make_graph(
        nodes=[("v0", "apple", VISUAL, 0, [])], edges=[], image_count=1, domain="NI"
    )
    gateway, provider = scripted_gateway([])
    with pytest.raises(GraphError):
        generate_context(gateway, graph, sub_of(graph), STYLES[0])
    assert provider.calls == []  # rejected before any model call


def test_stub_context_passes_verification(stub_gateway):
    graph = ni_graph()
    text = generate_context(stub_gateway, graph, sub_of(graph), STYLES[1])
    assert verify_context(text, graph, sub_of(graph)) == []


def test_style_draw_uniform_within_3_sigma():
    draws = 1200
    rng = random.Random(6)
    counts = Counter(choose_style(rng) for _ in range(draws))
    expected = draws / len(STYLES)
    sigma = (draws * (1 / len(STYLES)) * (1 - 1 / len(STYLES))) ** 0.5
    assert set(counts) == set(STYLES)
    for style in STYLES:
        assert abs(counts[style] - expected) < 3 * sigma
