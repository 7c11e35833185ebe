"""Question, answer, and chain-of-thought generation over sampled chains.

A chain is serialized to the triple-list format the prompts expect; the
generated question is structurally validated (no intermediate-entity mention,
answer round-trips through normalization) with one regeneration before the
chain is rejected. The CoT trace is validated for source attributions and
banned meta-phrases.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from typing import Optional

from .context import entity_label, match_key
from .evalkit import normalize_answer
from .filters import mentions_any, split_sentences
from .graph import (
    ANSWER_ATTRIBUTE,
    ANSWER_NAME,
    ChainSubgraph,
    ContentGraph,
    DOMAIN_HOP_BOUNDS,
    GraphError,
    sample_chain,
)
from .llm import Gateway, ParseFailure

BANNED_COT_PHRASES = ("from the subgraph", "the relation shows", "the entity indicates")

_COLOR_WORDS = {
    "red", "green", "blue", "yellow", "black", "white", "brown", "orange",
    "purple", "pink", "gray", "grey", "silver", "gold", "beige", "tan",
}


class QaGenerationError(Exception):
    pass


@dataclass
class QARecord:
    question: str
    answer: str
    cot_sentences: list[str]
    chain: ChainSubgraph
    domain: str
    hop_count: int
    triples: list[dict]
    banned_terms: list[str]
    filter_verdicts: dict[str, str] = field(default_factory=dict)
    record_id: str = ""

    def __post_init__(self):
        if not self.record_id:
            digest = hashlib.sha256(
                json.dumps(
                    [self.question, self.answer, self.domain, self.triples],
                    sort_keys=True,
                ).encode("utf-8")
            ).hexdigest()
            self.record_id = digest[:16]

    def to_json_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "question": self.question,
            "answer": self.answer,
            "cot_sentences": list(self.cot_sentences),
            "domain": self.domain,
            "hop_count": self.hop_count,
            "triples": self.triples,
            "banned_terms": list(self.banned_terms),
            "filter_verdicts": dict(self.filter_verdicts),
            "chain": {
                "edge_indices": list(self.chain.edge_indices),
                "node_sequence": list(self.chain.node_sequence),
                "answer_node_id": self.chain.answer_node_id,
                "hop_count": self.chain.hop_count,
                "answer_kind": self.chain.answer_kind,
                "answer_value": self.chain.answer_value,
            },
        }

    @classmethod
    def from_json_dict(cls, raw: dict) -> "QARecord":
        c = raw["chain"]
        chain = ChainSubgraph(
            edge_indices=tuple(c["edge_indices"]),
            node_sequence=tuple(c["node_sequence"]),
            answer_node_id=c["answer_node_id"],
            hop_count=c["hop_count"],
            answer_kind=c.get("answer_kind"),
            answer_value=c.get("answer_value"),
        )
        return cls(
            question=raw["question"],
            answer=raw["answer"],
            cot_sentences=list(raw["cot_sentences"]),
            chain=chain,
            domain=raw["domain"],
            hop_count=raw["hop_count"],
            triples=list(raw["triples"]),
            banned_terms=list(raw["banned_terms"]),
            filter_verdicts=dict(raw.get("filter_verdicts", {})),
            record_id=raw.get("record_id", ""),
        )


# ---------------------------------------------------------------------------
# Answer selection and chain serialization


def select_answer(chain: ChainSubgraph, graph: ContentGraph, rng: random.Random) -> str:
    """Pick the answer string and record it on the chain."""
    terminal = graph.nodes[chain.answer_node_id]
    last_edge = graph.edges[chain.edge_indices[-1]]
    if last_edge.is_solo():
        chain.answer_kind = ANSWER_ATTRIBUTE
        chain.answer_value = last_edge.relation
    elif chain.answer_kind == ANSWER_ATTRIBUTE or chain.hop_count == 1:
        if not terminal.attributes:
            raise GraphError("attribute answer requested on attribute-less terminal")
        chain.answer_kind = ANSWER_ATTRIBUTE
        chain.answer_value = rng.choice(terminal.attributes)
    else:
        chain.answer_kind = ANSWER_NAME
        chain.answer_value = terminal.name
    return chain.answer_value


def _attr_relation(attr: str) -> str:
    return "is the color of" if attr.lower() in _COLOR_WORDS else "is an attribute of"


def chain_to_triples(
    chain: ChainSubgraph, graph: ContentGraph, rng: random.Random
) -> list[dict]:
    """Serialize the chain to the subject/relation/object list the prompts
    consume, in path order. A visual head with attributes contributes one
    leading attribute triple (the anchor fact the question may state); an
    attribute-style answer contributes a final "is" triple."""
    seq = chain.node_sequence
    edges = [graph.edges[i] for i in chain.edge_indices]
    triples: list[dict] = []

    head = graph.nodes[seq[0]]
    if head.is_visual() and head.attributes and head.id != chain.answer_node_id:
        attr = rng.choice(head.attributes)
        triples.append(
            {"subject": attr, "relation": _attr_relation(attr),
             "object": entity_label(graph, head)}
        )

    path_edges = edges[:-1] if edges[-1].is_solo() else edges
    for i, edge in enumerate(path_edges):
        u, v = graph.nodes[seq[i]], graph.nodes[seq[i + 1]]
        triples.append(
            {"subject": entity_label(graph, u), "relation": edge.relation,
             "object": entity_label(graph, v)}
        )

    terminal = graph.nodes[chain.answer_node_id]
    if chain.answer_kind == ANSWER_ATTRIBUTE:
        triples.append(
            {"subject": entity_label(graph, terminal), "relation": "is",
             "object": chain.answer_value}
        )
    return triples


def banned_intermediate_terms(chain: ChainSubgraph, graph: ContentGraph) -> list[str]:
    """Strings the question must not contain: each intermediate entity's full
    display name and its parenthetical proper name. Generic type words alone
    are not banned."""
    terms: list[str] = []
    for nid in sorted(chain.intermediate_node_ids()):
        node = graph.nodes[nid]
        for term in (node.display_name, match_key(node)):
            if term and term not in terms:
                terms.append(term)
    return terms


def _source_tag(edge, graph: ContentGraph) -> dict:
    if edge.figure_label:
        return {"figure": edge.figure_label}
    touches_visual = any(graph.nodes[nid].is_visual() for nid in edge.endpoints())
    if touches_visual and edge.image_tag is not None:
        return {"image": f"image {edge.image_tag + 1}"}
    return {}


def chain_to_cot_subgraph(chain: ChainSubgraph, graph: ContentGraph) -> list[dict]:
    """Chain serialization for the CoT prompt: triples plus per-item source
    tags ("image"/"figure") so the trace can attribute each step."""
    seq = chain.node_sequence
    edges = [graph.edges[i] for i in chain.edge_indices]
    items: list[dict] = []
    path_edges = edges[:-1] if edges[-1].is_solo() else edges
    for i, edge in enumerate(path_edges):
        u, v = graph.nodes[seq[i]], graph.nodes[seq[i + 1]]
        items.append(
            {"subject": u.display_name, "relation": edge.relation,
             "object": v.display_name, **_source_tag(edge, graph)}
        )
    terminal = graph.nodes[chain.answer_node_id]
    if chain.answer_kind == ANSWER_ATTRIBUTE:
        last = edges[-1]
        tag = _source_tag(last, graph) if last.is_solo() else {}
        if not tag:
            tag = (
                {"figure": last.figure_label}
                if last.figure_label
                else {"image": f"image {terminal.image_index + 1}"}
            )
        items.append(
            {"subject": terminal.display_name, "relation": "is",
             "object": chain.answer_value, **tag}
        )
    return items


# ---------------------------------------------------------------------------
# Generation with validation


def generate_question(
    gateway: Gateway,
    graph: ContentGraph,
    chain: ChainSubgraph,
    answer: str,
    triples: list[dict],
    banned_terms: list[str],
    max_attempts: int = 2,
) -> str:
    intermediates = banned_terms or ["none"]
    bindings = {
        "triples": ",\n  ".join(json.dumps(t, ensure_ascii=False) for t in triples),
        "last_object": answer,
        "intermediate_objects": ", ".join(intermediates),
    }
    reasons: list[str] = []
    for _ in range(max_attempts):
        exchange = gateway.exchange("qa_generation", bindings)
        payload = exchange.parsed_payload
        if isinstance(payload, ParseFailure):
            reasons.append(payload.reason)
            continue
        question = payload["question"].strip()
        returned = payload["answer"].strip()
        hit = mentions_any(question, banned_terms)
        if hit:
            reasons.append(f"question mentions intermediate {hit!r}")
            continue
        if normalize_answer(returned) != normalize_answer(answer):
            reasons.append(f"returned answer {returned!r} != target {answer!r}")
            continue
        if not question:
            reasons.append("empty question")
            continue
        return question
    raise QaGenerationError("; ".join(reasons))


def generate_cot(
    gateway: Gateway,
    graph: ContentGraph,
    chain: ChainSubgraph,
    question: str,
    answer: str,
    max_attempts: int = 2,
) -> list[str]:
    items = chain_to_cot_subgraph(chain, graph)
    bindings = {
        "question": question,
        "answer": answer,
        "subgraph": json.dumps(items, ensure_ascii=False),
    }
    needs_visual = any("image" in it for it in items)
    needs_figure = any("figure" in it for it in items)
    needs_text = any("image" not in it and "figure" not in it for it in items)
    reasons: list[str] = []
    for _ in range(max_attempts):
        exchange = gateway.exchange("cot_generation", bindings)
        text = exchange.parsed_payload
        if isinstance(text, ParseFailure):
            reasons.append(text.reason)
            continue
        lowered = text.lower()
        banned = [p for p in BANNED_COT_PHRASES if p in lowered]
        if banned:
            reasons.append(f"banned phrase {banned[0]!r}")
            continue
        sentences = split_sentences(text)
        if not sentences or normalize_answer(answer) not in normalize_answer(sentences[-1]):
            reasons.append("final sentence does not contain the answer")
            continue
        if needs_visual and "from image" not in lowered:
            reasons.append("missing image attribution")
            continue
        if needs_figure and "from figure" not in lowered and "from table" not in lowered:
            reasons.append("missing figure/table attribution")
            continue
        if needs_text and "from the text context" not in lowered:
            reasons.append("missing text-context attribution")
            continue
        return sentences
    raise QaGenerationError("; ".join(reasons))


# ---------------------------------------------------------------------------
# Per-graph orchestration


def draw_hop_count(
    rng: random.Random, hop_distribution: dict[int, float], domain: str
) -> int:
    lo, hi = DOMAIN_HOP_BOUNDS[domain]
    choices = [(h, w) for h, w in sorted(hop_distribution.items()) if lo <= h <= hi]
    if not choices:
        raise GraphError("hop distribution empty after clipping to domain bounds")
    hops, weights = zip(*choices)
    return rng.choices(hops, weights=weights)[0]


def generate_qa_for_graph(
    gateway: Gateway,
    graph: ContentGraph,
    rng: random.Random,
    hop_distribution: dict[int, float],
    qa_cap: int = 3,
    chain_tries: int = 12,
) -> list[QARecord]:
    """Sample chains and produce up to qa_cap validated QA records. Chains
    that fail question or CoT validation twice are skipped, not fatal."""
    records: list[QARecord] = []
    seen_chains: set[tuple] = set()
    for _ in range(chain_tries):
        if len(records) >= qa_cap:
            break
        h = draw_hop_count(rng, hop_distribution, graph.domain)
        chain = sample_chain(graph, h, rng_seed=rng.randrange(2**32))
        if chain is None or chain.identity() in seen_chains:
            continue
        seen_chains.add(chain.identity())
        answer = select_answer(chain, graph, rng)
        triples = chain_to_triples(chain, graph, rng)
        banned = banned_intermediate_terms(chain, graph)
        try:
            question = generate_question(gateway, graph, chain, answer, triples, banned)
            cot = generate_cot(gateway, graph, chain, question, answer)
        except QaGenerationError:
            continue
        records.append(
            QARecord(
                question=question,
                answer=answer,
                cot_sentences=cot,
                chain=chain,
                domain=graph.domain,
                hop_count=chain.hop_count,
                triples=triples,
                banned_terms=banned,
            )
        )
    return records
