"""Scientific-paper ingestion from TeX sources.

Pipeline: strip comments and preamble, segment into paragraphs, resolve
figure/table references; run an entity-inventory pass; extract text-grounded
relations from plain paragraphs and figure-grounded relations from
figure-referencing paragraphs; scrub sentences that restate figure content
(cosine threshold against relation descriptions); finally lower everything
to a content graph where each figure or table is one image.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Optional

from .embedclient import cosine
from .filters import split_sentences
from .graph import ContentGraph, EntityNode, RelationEdge, TEXTUAL, VISUAL
from .llm import Gateway, ParseFailure

DEFAULT_SIMILARITY_THRESHOLD = 0.6

PLAIN = "plain"
FIGURE_REFERENCING = "figure"


class PaperIngestError(Exception):
    pass


@dataclass
class FigureInfo:
    label: str  # e.g. "Figure 1" / "Table 2"
    image_ref: str = ""
    caption: str = ""


@dataclass
class ParagraphUnit:
    index: int
    sentences: list[str]
    figure_refs: list[str] = field(default_factory=list)

    @property
    def kind(self) -> str:
        return FIGURE_REFERENCING if self.figure_refs else PLAIN

    @property
    def text(self) -> str:
        return " ".join(self.sentences)


# ---------------------------------------------------------------------------
# TeX segmentation

_COMMENT_RE = re.compile(r"(?<!\\)%.*$", re.MULTILINE)
_FLOAT_ENV_RE = re.compile(
    r"\\begin\{(figure\*?|table\*?)\}.*?\\end\{\1\}", re.DOTALL
)
_INLINE_STRIP = [
    (re.compile(r"\\(?:textbf|textit|emph|texttt|mathrm)\{([^{}]*)\}"), r"\1"),
    (re.compile(r"\\cite[tp]?\{[^{}]*\}"), ""),
    (re.compile(r"\\label\{[^{}]*\}"), ""),
    (re.compile(r"~"), " "),
]
_COMMAND_LINE_RE = re.compile(
    r"^\s*\\(section|subsection|subsubsection|paragraph|maketitle|centering|"
    r"includegraphics|caption|bibliography|bibliographystyle|title|author|"
    r"date|begin|end|item|label|vspace|hspace|noindent\s*$)"
)
_REF_RE = re.compile(r"\\(?:auto|c|C)?ref\{([^{}]*)\}")
_LITERAL_REF_RE = re.compile(r"\b(Figure|Table)\s*~?\s*(\d+)\b")


def build_label_map(tex: str) -> dict[str, str]:
    """Map TeX labels inside float environments to 'Figure N' / 'Table N'
    by order of appearance."""
    labels: dict[str, str] = {}
    counts = {"figure": 0, "table": 0}
    for m in _FLOAT_ENV_RE.finditer(_COMMENT_RE.sub("", tex)):
        env = "figure" if m.group(1).startswith("figure") else "table"
        counts[env] += 1
        display = f"{env.capitalize()} {counts[env]}"
        for lm in re.finditer(r"\\label\{([^{}]*)\}", m.group(0)):
            labels[lm.group(1)] = display
    return labels


def _clean_paragraph(raw: str, label_map: dict[str, str]) -> str:
    text = raw
    text = _REF_RE.sub(lambda m: label_map.get(m.group(1), m.group(1)), text)
    for pattern, repl in _INLINE_STRIP:
        text = pattern.sub(repl, text)
    lines = [
        line for line in text.splitlines()
        if line.strip() and not _COMMAND_LINE_RE.match(line)
    ]
    return re.sub(r"\s+", " ", " ".join(lines)).strip()


def segment_paragraphs(tex: str) -> list[ParagraphUnit]:
    """Split a TeX source into prose paragraphs with indexed sentences and
    resolved figure/table references."""
    label_map = build_label_map(tex)
    body = _COMMENT_RE.sub("", tex)
    if "\\begin{document}" in body:
        body = body.split("\\begin{document}", 1)[1]
    if "\\end{document}" in body:
        body = body.split("\\end{document}", 1)[0]
    body = _FLOAT_ENV_RE.sub("\n\n", body)

    units: list[ParagraphUnit] = []
    for block in re.split(r"\n\s*\n", body):
        cleaned = _clean_paragraph(block, label_map)
        if not cleaned or cleaned.startswith("\\"):
            continue
        refs: list[str] = []
        for kind_word, number in _LITERAL_REF_RE.findall(cleaned):
            display = f"{kind_word} {number}"
            if display not in refs:
                refs.append(display)
        units.append(
            ParagraphUnit(
                index=len(units),
                sentences=split_sentences(cleaned),
                figure_refs=refs,
            )
        )
    return units


# ---------------------------------------------------------------------------
# LLM extraction passes


def extract_entity_inventory(
    gateway: Gateway, paragraphs: list[ParagraphUnit], max_chars: int = 20000
) -> list[str]:
    document = "\n\n".join(p.text for p in paragraphs)[:max_chars]
    exchange = gateway.exchange("entity_inventory", {"document": document})
    payload = exchange.parsed_payload
    if isinstance(payload, ParseFailure):
        raise PaperIngestError(f"entity inventory failed: {payload.reason}")
    inventory: list[str] = []
    for item in payload:
        name = str(item).strip()
        if name and name not in inventory:
            inventory.append(name)
    return inventory


def _closed_world(relations, entities: set[str]) -> tuple[list[dict], list[dict]]:
    kept, dropped = [], []
    for rel in relations:
        source = rel.get("source_entity")
        target = rel.get("target_entity")
        if source not in entities or (target is not None and target not in entities):
            dropped.append(rel)
        else:
            kept.append(rel)
    return kept, dropped


def extract_text_relations(
    gateway: Gateway, paragraph: ParagraphUnit, entities: list[str]
) -> list[dict]:
    exchange = gateway.exchange(
        "paper_nonfig_paragraph",
        {"entities_json": json.dumps(entities, ensure_ascii=False),
         "paragraph": paragraph.text},
    )
    payload = exchange.parsed_payload
    if isinstance(payload, ParseFailure):
        raise PaperIngestError(f"text relation extraction failed: {payload.reason}")
    kept, _ = _closed_world(payload, set(entities))
    return kept


def extract_visual_relations(
    gateway: Gateway,
    paragraph: ParagraphUnit,
    entities: list[str],
    figures: list[FigureInfo],
) -> list[dict]:
    figure_labels = {f.label for f in figures}
    sentences_text = "\n".join(f"{i}: {s}" for i, s in enumerate(paragraph.sentences))
    exchange = gateway.exchange(
        "paper_fig_paragraph",
        {
            "figures_json": json.dumps(
                [{"label": f.label, "caption": f.caption} for f in figures],
                ensure_ascii=False,
            ),
            "entities_json": json.dumps(entities, ensure_ascii=False),
            "sentences_text": sentences_text,
        },
    )
    payload = exchange.parsed_payload
    if isinstance(payload, ParseFailure):
        raise PaperIngestError(f"visual relation extraction failed: {payload.reason}")
    kept, _ = _closed_world(payload, set(entities))
    valid = []
    for rel in kept:
        if rel.get("figure") not in figure_labels:
            continue
        idx = rel.get("idx", [])
        if not idx or any(not (0 <= i < len(paragraph.sentences)) for i in idx):
            continue
        valid.append(rel)
    return valid


# ---------------------------------------------------------------------------
# Sentence scrubbing


def filter_sentences(
    paragraph: ParagraphUnit,
    visual_relations: list[dict],
    embedder,
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
) -> tuple[list[str], list[int]]:
    """Remove sentences whose max cosine against any visual relation
    description reaches the threshold. Plain paragraphs pass unchanged.
    Returns (retained sentences, removed indices)."""
    if paragraph.kind == PLAIN or not visual_relations:
        return list(paragraph.sentences), []
    descriptions = [str(r["relationship_description"]) for r in visual_relations]
    sent_vecs = embedder.embed("sentence", paragraph.sentences)
    desc_vecs = embedder.embed("sentence", descriptions)
    retained, removed = [], []
    for i, sentence in enumerate(paragraph.sentences):
        best = max(cosine(sent_vecs[i], dv) for dv in desc_vecs)
        if best >= threshold:
            removed.append(i)
        else:
            retained.append(sentence)
    return retained, removed


# ---------------------------------------------------------------------------
# Graph assembly


def build_paper_graph(
    entities: list[str],
    text_relations: list[dict],
    visual_relations: list[dict],
    figures: list[FigureInfo],
) -> ContentGraph:
    """Entities referenced by any relation become nodes; those appearing in a
    figure-grounded relation are visual, anchored to that figure's image.
    Figures and tables are enumerated as the sample's images."""
    if not visual_relations:
        raise PaperIngestError("no figure-grounded relations; sample has no cross-modal content")
    if not figures:
        raise PaperIngestError("empty figure manifest")
    figure_index = {f.label: i for i, f in enumerate(figures)}

    referenced: list[str] = []
    for rel in text_relations + visual_relations:
        for name in (rel.get("source_entity"), rel.get("target_entity")):
            if name is not None and name not in referenced:
                referenced.append(name)
    inventory = set(entities)
    unknown = [n for n in referenced if n not in inventory]
    if unknown:
        raise PaperIngestError(f"relation references unknown entities: {unknown}")

    visual_anchor: dict[str, int] = {}
    for rel in visual_relations:
        idx = figure_index[rel["figure"]]
        for name in (rel.get("source_entity"), rel.get("target_entity")):
            if name is not None and name not in visual_anchor:
                visual_anchor[name] = idx

    nodes: dict[str, EntityNode] = {}
    node_id_of: dict[str, str] = {}
    for i, name in enumerate(referenced):
        node_id = f"e{i}"
        node_id_of[name] = node_id
        if name in visual_anchor:
            nodes[node_id] = EntityNode(
                id=node_id, name=name, display_name=name, origin=VISUAL,
                image_index=visual_anchor[name],
            )
        else:
            nodes[node_id] = EntityNode(
                id=node_id, name=name, display_name=name, origin=TEXTUAL,
            )

    edges: list[RelationEdge] = []
    for rel in text_relations:
        target = rel.get("target_entity")
        edges.append(
            RelationEdge(
                subject_id=node_id_of[rel["source_entity"]],
                object_id=None if target is None else node_id_of[target],
                relation=str(rel["relationship_description"]),
            )
        )
    for rel in visual_relations:
        target = rel.get("target_entity")
        edges.append(
            RelationEdge(
                subject_id=node_id_of[rel["source_entity"]],
                object_id=None if target is None else node_id_of[target],
                relation=str(rel["relationship_description"]),
                image_tag=figure_index[rel["figure"]],
                figure_label=rel["figure"],
                sentence_indices=[int(i) for i in rel["idx"]],
            )
        )

    graph = ContentGraph(
        nodes=nodes, edges=edges, image_count=len(figures), domain="SP"
    )
    graph.validate()
    return graph


@dataclass
class PaperIngestResult:
    graph: ContentGraph
    context: str
    entities: list[str]
    removed_sentences: dict[int, list[int]]  # paragraph index -> removed idx


def ingest_paper(
    gateway: Gateway,
    tex: str,
    figures: list[FigureInfo],
    embedder,
    threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
) -> PaperIngestResult:
    """Full paper ingestion. The sample's textual context is the surviving
    sentence text of all paragraphs, concatenated in document order."""
    paragraphs = segment_paragraphs(tex)
    if not paragraphs:
        raise PaperIngestError("no paragraphs found")
    entities = extract_entity_inventory(gateway, paragraphs)

    text_relations: list[dict] = []
    visual_relations: list[dict] = []
    retained_blocks: list[str] = []
    removed_sentences: dict[int, list[int]] = {}
    for paragraph in paragraphs:
        if paragraph.kind == PLAIN:
            text_relations.extend(extract_text_relations(gateway, paragraph, entities))
            retained_blocks.append(paragraph.text)
        else:
            rels = extract_visual_relations(gateway, paragraph, entities, figures)
            visual_relations.extend(rels)
            retained, removed = filter_sentences(paragraph, rels, embedder, threshold)
            if removed:
                removed_sentences[paragraph.index] = removed
            if retained:
                retained_blocks.append(" ".join(retained))

    graph = build_paper_graph(entities, text_relations, visual_relations, figures)
    return PaperIngestResult(
        graph=graph,
        context="\n\n".join(retained_blocks),
        entities=entities,
        removed_sentences=removed_sentences,
    )
