import random

import pytest

from crossqa.graph import ContentGraph, EntityNode, RelationEdge, TEXTUAL, VISUAL
from crossqa.llm import Gateway, ScriptedProvider
from crossqa.scene import RawSceneGraph, SceneObject, SceneRelation
from crossqa.stub import DeterministicStubProvider


def make_scene(image_id, spec):
    """spec: {oid: (name, [attrs], [(relation, target_oid)])}"""
    objects = {}
    for oid, (name, attrs, rels) in spec.items():
        objects[oid] = SceneObject(
            name=name,
            attributes=list(attrs),
            relations=[SceneRelation(r, t) for r, t in rels],
        )
    return RawSceneGraph(image_id=image_id, objects=objects)


def make_graph(nodes, edges, image_count=1, domain="NI"):
    """nodes: list of (id, name, origin, image_index, attrs)
    edges: list of (subject_id, object_id_or_None, relation[, image_tag])"""
    node_map = {}
    for spec in nodes:
        nid, name, origin, image_index, attrs = spec
        node_map[nid] = EntityNode(
            id=nid,
            name=name,
            display_name=name,
            origin=origin,
            image_index=image_index if origin == VISUAL else None,
            attributes=list(attrs),
        )
    edge_list = []
    for spec in edges:
        subject, obj, relation = spec[:3]
        image_tag = spec[3] if len(spec) > 3 else None
        edge_list.append(
            RelationEdge(
                subject_id=subject, object_id=obj, relation=relation,
                image_tag=image_tag,
            )
        )
    graph = ContentGraph(
        nodes=node_map, edges=edge_list, image_count=image_count, domain=domain
    )
    graph.validate()
    return graph


def random_scene(rng: random.Random, max_objects=8) -> RawSceneGraph:
    names = ["apple", "dog", "cat", "table", "lamp", "car"]
    attrs = ["red", "green", "small", "large", "old"]
    relations = ["on", "near", "under", "behind"]
    n = rng.randint(1, max_objects)
    objects = {}
    for i in range(n):
        objects[f"o{i}"] = SceneObject(
            name=rng.choice(names),
            attributes=rng.sample(attrs, rng.randint(0, 2)),
            relations=[],
        )
    for i in range(n):
        for _ in range(rng.randint(0, 2)):
            target = f"o{rng.randrange(n)}"
            if target != f"o{i}":
                objects[f"o{i}"].relations.append(
                    SceneRelation(rng.choice(relations), target)
                )
    return RawSceneGraph(image_id=f"img{rng.randrange(10 ** 6)}", objects=objects)


@pytest.fixture
def stub_gateway():
    return Gateway(DeterministicStubProvider(), "stub-model")


def scripted_gateway(responses):
    provider = ScriptedProvider(responses=responses)
    return Gateway(provider, "scripted-model", sleep=lambda s: None), provider
