"""Answer-normalized EM/F1 scoring and the evaluation harness.

Normalization follows the usual extractive-QA convention: lowercase, strip
punctuation, drop the articles a/an/the, collapse whitespace.
"""

from __future__ import annotations

import json
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

_ARTICLES_RE = re.compile(r"\b(a|an|the)\b")
_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


def normalize_answer(text: str) -> str:
    text = text.lower()
    text = text.translate(_PUNCT_TABLE)
    text = _ARTICLES_RE.sub(" ", text)
    return " ".join(text.split())


def exact_match(pred: str, gold: str) -> int:
    return int(normalize_answer(pred) == normalize_answer(gold))


def token_f1(pred: str, gold: str) -> float:
    pred_tokens = normalize_answer(pred).split()
    gold_tokens = normalize_answer(gold).split()
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    common = Counter(pred_tokens) & Counter(gold_tokens)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


DEFAULT_COT_MARKERS = ("answer is", "answer:")


def extract_final_answer(
    response: str,
    mode: str,
    markers: tuple[str, ...] = DEFAULT_COT_MARKERS,
) -> str:
    """DirectAnswer: trimmed response. CoT: text after the last answer marker,
    falling back to the last sentence's post-colon segment."""
    if mode == "direct":
        return response.strip()
    if mode != "cot":
        raise ValueError(f"unknown mode {mode!r}")
    lowered = response.lower()
    best = -1
    best_marker = None
    for marker in markers:
        idx = lowered.rfind(marker)
        if idx > best:
            best = idx
            best_marker = marker
    if best >= 0:
        tail = response[best + len(best_marker):]
        return tail.strip().strip(":").strip().rstrip(".").strip()
    # Fallback: last sentence, after any colon.
    sentences = [s for s in re.split(r"(?<=[.!?])\s+", response.strip()) if s]
    if not sentences:
        return ""
    last = sentences[-1]
    if ":" in last:
        last = last.split(":")[-1]
    return last.strip().rstrip(".!?").strip()


@dataclass
class StratumScore:
    count: int = 0
    em_sum: float = 0.0
    f1_sum: float = 0.0

    def add(self, em: float, f1: float) -> None:
        self.count += 1
        self.em_sum += em
        self.f1_sum += f1

    @property
    def em(self) -> float:
        return self.em_sum / self.count if self.count else 0.0

    @property
    def f1(self) -> float:
        return self.f1_sum / self.count if self.count else 0.0

    def to_json_dict(self) -> dict:
        return {"count": self.count, "em": self.em, "f1": self.f1}


@dataclass
class EvalResult:
    mode: str
    overall: StratumScore = field(default_factory=StratumScore)
    per_domain: dict[str, StratumScore] = field(default_factory=dict)
    per_hop: dict[int, StratumScore] = field(default_factory=dict)
    missing_ids: list[str] = field(default_factory=list)
    unknown_ids: list[str] = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "overall": self.overall.to_json_dict(),
            "per_domain": {k: v.to_json_dict() for k, v in sorted(self.per_domain.items())},
            "per_hop": {str(k): v.to_json_dict() for k, v in sorted(self.per_hop.items())},
            "missing_predictions": self.missing_ids,
            "unknown_prediction_ids": self.unknown_ids,
        }

    def to_text_table(self) -> str:
        rows = [("overall", self.overall)]
        rows += [(d, s) for d, s in sorted(self.per_domain.items())]
        rows += [(f"{h}-hop", s) for h, s in sorted(self.per_hop.items())]
        width = max(len(name) for name, _ in rows)
        lines = [f"{'stratum'.ljust(width)}  count      EM      F1"]
        for name, s in rows:
            lines.append(f"{name.ljust(width)}  {s.count:5d}  {s.em:6.3f}  {s.f1:6.3f}")
        return "\n".join(lines)


@dataclass
class EvalItem:
    item_id: str
    question: str
    answer: str
    domain: str
    hop_count: int


def evaluate_run(
    predictions: dict[str, str],
    items: list[EvalItem],
    mode: str = "cot",
    markers: tuple[str, ...] = DEFAULT_COT_MARKERS,
) -> EvalResult:
    """Score a prediction map against test items. Missing predictions score 0
    and are counted; prediction ids not covering any item are reported."""
    result = EvalResult(mode=mode)
    item_ids = {it.item_id for it in items}
    result.unknown_ids = sorted(set(predictions) - item_ids)
    for item in items:
        raw = predictions.get(item.item_id)
        if raw is None:
            result.missing_ids.append(item.item_id)
            em, f1 = 0.0, 0.0
        else:
            pred = extract_final_answer(raw, mode, markers)
            em = float(exact_match(pred, item.answer))
            f1 = token_f1(pred, item.answer)
        result.overall.add(em, f1)
        result.per_domain.setdefault(item.domain, StratumScore()).add(em, f1)
        result.per_hop.setdefault(item.hop_count, StratumScore()).add(em, f1)
    return result


def load_predictions_jsonl(path) -> dict[str, str]:
    """Predictions file: one {"id", "response"} JSON object per line."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            out[str(rec["id"])] = rec["response"]
    return out
