"""Staged post-generation filter cascade.

Three stages applied in order with short-circuiting: intermediate-mention
rejection, single-modality answerability voting (three judge models over a
text-only and a visual-only serialization of the graph), and chain-of-thought
length pruning. Also home of the sentence splitter shared across the package.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Optional

from .evalkit import normalize_answer
from .graph import ContentGraph
from .llm import Gateway, JUDGE_DECODING, RetriesExhausted

MAX_COT_SENTENCES = 10

TEXT_ONLY = "text"
VISUAL_ONLY = "visual"

STAGE_MENTIONS = "intermediate_mentions"
STAGE_MODALITY = "single_modality"
STAGE_COT = "cot_length"
STAGES = (STAGE_MENTIONS, STAGE_MODALITY, STAGE_COT)

_ABBREVIATIONS = {
    "dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr", "fig", "figs", "eq",
    "eqs", "sec", "no", "vs", "etc", "al", "e.g", "i.e", "cf", "approx",
}

_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")


def _ends_with_abbreviation(sentence: str) -> bool:
    m = re.search(r"([A-Za-z][A-Za-z.]*)\.$", sentence)
    if m is None:
        return False
    word = m.group(1).rstrip(".").lower()
    return word in _ABBREVIATIONS or (len(word) == 1 and m.group(1)[0].isupper())


def split_sentences(text: str) -> list[str]:
    """Terminal-punctuation split with an abbreviation guard, so "Dr. Smith
    walks. She stops." yields two sentences, not three."""
    parts = [p for p in _SPLIT_RE.split(text.strip()) if p]
    out: list[str] = []
    for part in parts:
        if out and _ends_with_abbreviation(out[-1]):
            out[-1] = out[-1] + " " + part
        else:
            out.append(part)
    return out


def mentions_any(question: str, terms: list[str]) -> Optional[str]:
    lowered = question.lower()
    for term in terms:
        if term and term.lower() in lowered:
            return term
    return None


# ---------------------------------------------------------------------------
# Modality views


@dataclass
class ModalityView:
    modality: str  # TEXT_ONLY | VISUAL_ONLY
    nodes: list[str]
    edges: list[str]

    def facts_text(self) -> str:
        lines = ["Entities:"]
        lines += [f"- {n}" for n in self.nodes] or ["- (none)"]
        lines.append("Facts:")
        lines += [f"- {e}" for e in self.edges] or ["- (none)"]
        return "\n".join(lines)


def build_modality_views(graph: ContentGraph) -> tuple[ModalityView, ModalityView]:
    """Partition the graph into a text-only and a visual-only serialization.

    Text side: textual nodes and text-text edges. Visual side: visual nodes
    with their attributes, intra-image visual relations, and solo actions.
    Cross-image visual relations and visual-textual anchor edges belong to
    neither view (the anchor edges are exactly the cross-modal links the
    filter is probing for).
    """
    text_nodes, text_edges = [], []
    visual_nodes, visual_edges = [], []
    for node in graph.nodes.values():
        if node.is_visual():
            attrs = f" ({', '.join(node.attributes)})" if node.attributes else ""
            visual_nodes.append(
                f"{node.display_name}{attrs} in image {node.image_index + 1}"
            )
        else:
            text_nodes.append(node.display_name)
    for edge in graph.edges:
        subj = graph.nodes[edge.subject_id]
        if edge.is_solo():
            if subj.is_visual():
                visual_edges.append(f"{subj.display_name} {edge.relation}")
            else:
                text_edges.append(f"{subj.display_name} {edge.relation}")
            continue
        obj = graph.nodes[edge.object_id]
        line = f"{subj.display_name} {edge.relation} {obj.display_name}"
        if subj.is_visual() and obj.is_visual():
            if subj.image_index == obj.image_index:
                visual_edges.append(line)
        elif not subj.is_visual() and not obj.is_visual():
            text_edges.append(line)
    return (
        ModalityView(TEXT_ONLY, text_nodes, text_edges),
        ModalityView(VISUAL_ONLY, visual_nodes, visual_edges),
    )


# ---------------------------------------------------------------------------
# Stages


def check_intermediate_mentions(record) -> str:
    """'fail' iff the question names an intermediate entity."""
    hit = mentions_any(record.question, record.banned_terms)
    return "fail" if hit else "pass"


def single_modality_test(
    record,
    graph: ContentGraph,
    gateway: Gateway,
    judge_model_ids: list[str],
) -> tuple[str, dict[str, str]]:
    """'fail' iff, for some single modality view, every judge answers the
    question correctly (EM-normalized) from that view alone."""
    answers: dict[str, str] = {}
    gold = normalize_answer(record.answer)
    removed = False
    for view in build_modality_views(graph):
        facts = view.facts_text()
        correct = 0
        for judge in judge_model_ids:
            exchange = gateway.exchange(
                "modality_judge",
                {"facts": facts, "question": record.question},
                decoding=JUDGE_DECODING,
                model_id=judge,
            )
            answer = exchange.parsed_payload if exchange.ok() else ""
            answers[f"{view.modality}:{judge}"] = str(answer)
            if normalize_answer(str(answer)) == gold:
                correct += 1
        if correct == len(judge_model_ids):
            removed = True
    return ("fail" if removed else "pass", answers)


def prune_cot(record) -> str:
    return "fail" if len(record.cot_sentences) > MAX_COT_SENTENCES else "pass"


# ---------------------------------------------------------------------------
# Cascade


@dataclass
class FilterLedger:
    counts: dict[str, int] = field(default_factory=dict)
    entries: list[dict] = field(default_factory=list)

    def bump(self, key: str) -> None:
        self.counts[key] = self.counts.get(key, 0) + 1

    def add(self, record_id: str, stage: str, verdict: str, detail=None) -> None:
        entry = {"record_id": record_id, "stage": stage, "verdict": verdict}
        if detail is not None:
            entry["detail"] = detail
        self.entries.append(entry)

    def write_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.entries:
                fh.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")
            fh.write(
                json.dumps({"counts": self.counts}, ensure_ascii=False, sort_keys=True)
                + "\n"
            )


def run_filters(
    items: list[tuple],
    gateway: Gateway,
    judge_model_ids: list[str],
) -> tuple[list, FilterLedger]:
    """Apply the cascade to (record, graph) pairs; returns survivors + ledger.

    Stages short-circuit: a record failing the mention check never reaches
    the judges. A judging transport failure marks the record undetermined and
    excludes it (test-set purity over yield).
    """
    ledger = FilterLedger(counts={stage: 0 for stage in STAGES})
    ledger.counts.update({"survived": 0, "undetermined": 0})
    survivors = []
    for record, graph in items:
        for stage in STAGES:
            record.filter_verdicts.setdefault(stage, "na")

        verdict = check_intermediate_mentions(record)
        record.filter_verdicts[STAGE_MENTIONS] = verdict
        ledger.add(record.record_id, STAGE_MENTIONS, verdict)
        if verdict == "fail":
            ledger.bump(STAGE_MENTIONS)
            continue

        try:
            verdict, judge_answers = single_modality_test(
                record, graph, gateway, judge_model_ids
            )
        except RetriesExhausted:
            record.filter_verdicts[STAGE_MODALITY] = "undetermined"
            ledger.add(record.record_id, STAGE_MODALITY, "undetermined")
            ledger.bump("undetermined")
            continue
        record.filter_verdicts[STAGE_MODALITY] = verdict
        ledger.add(record.record_id, STAGE_MODALITY, verdict, detail=judge_answers)
        if verdict == "fail":
            ledger.bump(STAGE_MODALITY)
            continue

        verdict = prune_cot(record)
        record.filter_verdicts[STAGE_COT] = verdict
        ledger.add(record.record_id, STAGE_COT, verdict)
        if verdict == "fail":
            ledger.bump(STAGE_COT)
            continue

        ledger.bump("survived")
        survivors.append(record)
    return survivors, ledger
