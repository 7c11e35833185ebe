"""Dataset serialization, training formatting, and summary statistics.

One sample = a set of image references, one textual context, and one or more
QA records. Files are JSONL with a stable field order; a manifest carries
counts and a content hash so reruns can be compared byte-for-byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .qa import QARecord


class DatasetError(Exception):
    pass


def make_sample_id(domain: str, image_refs: list[str], context: str) -> str:
    digest = hashlib.sha256(
        json.dumps([domain, image_refs, context], sort_keys=True).encode("utf-8")
    ).hexdigest()
    return digest[:16]


@dataclass
class DatasetSample:
    sample_id: str
    domain: str  # NI | VF | SP
    image_refs: list[str]
    context: str
    qa: list[QARecord]
    split: str = "train"  # train | test

    def validate(self) -> None:
        if not self.image_refs:
            raise DatasetError(f"sample {self.sample_id}: empty image_refs")
        if not self.qa:
            raise DatasetError(f"sample {self.sample_id}: no QA records")
        if self.split == "test" and len(self.qa) != 1:
            raise DatasetError(
                f"sample {self.sample_id}: test samples are single-turn"
            )
        if self.split not in ("train", "test"):
            raise DatasetError(f"sample {self.sample_id}: bad split {self.split!r}")

    def to_json_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "domain": self.domain,
            "split": self.split,
            "image_refs": list(self.image_refs),
            "context": self.context,
            "qa": [r.to_json_dict() for r in self.qa],
        }

    @classmethod
    def from_json_dict(cls, raw: dict) -> "DatasetSample":
        return cls(
            sample_id=raw["sample_id"],
            domain=raw["domain"],
            image_refs=list(raw["image_refs"]),
            context=raw["context"],
            qa=[QARecord.from_json_dict(r) for r in raw["qa"]],
            split=raw.get("split", "train"),
        )


def restrict_test_single_turn(samples: list[DatasetSample]) -> list[DatasetSample]:
    """Split multi-QA test samples into one single-turn sample per QA pair."""
    out = []
    for sample in samples:
        if sample.split != "test" or len(sample.qa) <= 1:
            out.append(sample)
            continue
        for i, record in enumerate(sample.qa):
            out.append(
                DatasetSample(
                    sample_id=f"{sample.sample_id}-{i}",
                    domain=sample.domain,
                    image_refs=list(sample.image_refs),
                    context=sample.context,
                    qa=[record],
                    split="test",
                )
            )
    return out


def write_dataset(samples: list[DatasetSample], path) -> dict:
    """Write JSONL (UTF-8, stable field order) and return the manifest."""
    for sample in samples:
        sample.validate()
    lines = [
        json.dumps(s.to_json_dict(), ensure_ascii=False) for s in samples
    ]
    payload = "".join(line + "\n" for line in lines)
    Path(path).write_text(payload, encoding="utf-8")
    counts: dict[str, int] = {}
    for s in samples:
        counts[s.domain] = counts.get(s.domain, 0) + 1
    return {
        "samples": len(samples),
        "qa_pairs": sum(len(s.qa) for s in samples),
        "domains": counts,
        "sha256": hashlib.sha256(payload.encode("utf-8")).hexdigest(),
    }


def read_dataset(path) -> list[DatasetSample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                samples.append(DatasetSample.from_json_dict(json.loads(line)))
    return samples


# ---------------------------------------------------------------------------
# Training format


def to_training_format(samples: list[DatasetSample]) -> list[dict]:
    """Each train sample yields two conversation records: a direct-answer one
    and a CoT one. Multi-QA samples become multi-turn conversations sharing
    the image/context prefix; the first user turn carries the context."""
    records = []
    for sample in samples:
        if sample.split != "train":
            continue
        for mode in ("direct", "cot"):
            turns = []
            for i, qa in enumerate(sample.qa):
                user = qa.question if i else f"{sample.context}\n\n{qa.question}"
                if mode == "direct":
                    assistant = qa.answer
                else:
                    assistant = " ".join(qa.cot_sentences)
                turns.append({"role": "user", "content": user})
                turns.append({"role": "assistant", "content": assistant})
            records.append(
                {
                    "sample_id": sample.sample_id,
                    "mode": mode,
                    "images": list(sample.image_refs),
                    "turns": turns,
                }
            )
    return records


# ---------------------------------------------------------------------------
# Statistics


def hop_bucket(h: int) -> int:
    """An h-edge chain needs h+1 linked facts, so h=1 questions are reported
    in the 2-hop bucket."""
    return max(h, 2)


def compute_stats(samples: list[DatasetSample]) -> dict:
    """Per (split, domain): sample count, average images and whitespace
    tokens per sample, QA count, and per-hop QA counts."""
    stats: dict[str, dict[str, dict]] = {}
    for sample in samples:
        row = (
            stats.setdefault(sample.split, {})
            .setdefault(
                sample.domain,
                {
                    "samples": 0,
                    "images_total": 0,
                    "tokens_total": 0,
                    "qa": 0,
                    "hops": {},
                },
            )
        )
        row["samples"] += 1
        row["images_total"] += len(sample.image_refs)
        row["tokens_total"] += len(sample.context.split())
        row["qa"] += len(sample.qa)
        for qa in sample.qa:
            bucket = str(hop_bucket(qa.hop_count))
            row["hops"][bucket] = row["hops"].get(bucket, 0) + 1

    out: dict[str, dict[str, dict]] = {}
    for split, domains in stats.items():
        out[split] = {}
        for domain, row in domains.items():
            n = row["samples"]
            out[split][domain] = {
                "samples": n,
                "avg_images_per_sample": row["images_total"] / n if n else 0.0,
                "avg_text_tokens_per_sample": row["tokens_total"] / n if n else 0.0,
                "qa": row["qa"],
                "hops": {k: row["hops"][k] for k in sorted(row["hops"])},
            }
    return out


def render_stats_table(stats: dict) -> str:
    domains = sorted({d for split in stats.values() for d in split})
    if not domains:
        return "(empty dataset)"
    lines = []
    header = f"{'split':6} {'statistic':28}" + "".join(f"{d:>12}" for d in domains)
    lines.append(header)
    for split in sorted(stats):
        rows = stats[split]

        def cell(key, fmt="{}"):
            return "".join(
                f"{fmt.format(rows[d][key]) if d in rows else '--':>12}"
                for d in domains
            )

        lines.append(f"{split:6} {'samples':28}" + cell("samples"))
        lines.append(
            f"{'':6} {'avg images/sample':28}" + cell("avg_images_per_sample", "{:.1f}")
        )
        lines.append(
            f"{'':6} {'avg text tokens/sample':28}"
            + cell("avg_text_tokens_per_sample", "{:.1f}")
        )
        lines.append(f"{'':6} {'qa pairs':28}" + cell("qa"))
        buckets = sorted({b for d in domains if d in rows for b in rows[d]["hops"]})
        for bucket in buckets:
            vals = "".join(
                f"{rows[d]['hops'].get(bucket, 0) if d in rows else '--':>12}"
                for d in domains
            )
            lines.append(f"{'':6} {f'{bucket}-hop qa':28}" + vals)
    return "\n".join(lines)
