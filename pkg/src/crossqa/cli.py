"""Pipeline command line: composable stages over JSONL interchange files.

Each stage reads the previous stage's output, writes its own atomically, and
leaves a fingerprint sidecar so completed stages are skipped on rerun. With
the offline stub provider and a fixed seed the whole pipeline is
byte-reproducible.

Exit codes: 0 ok, 1 user/input error, 2 provider failure.
"""

from __future__ import annotations

import functools
import hashlib
import json
import os
import random
import sys
import tempfile
from pathlib import Path

import click

from . import augment as augment_mod
from . import context as context_mod
from . import dataset as dataset_mod
from . import evalkit
from . import filters as filters_mod
from . import graph as graph_mod
from . import papers as papers_mod
from . import qa as qa_mod
from . import scene as scene_mod
from . import video as video_mod
from .config import ConfigError, PipelineConfig
from .embedclient import (
    DeterministicEmbedder,
    EmbeddingError,
    HttpEmbeddingClient,
    RecordedEmbeddings,
)
from .llm import (
    Gateway,
    HttpProvider,
    ProviderContentError,
    ProviderError,
    RetriesExhausted,
)
from .stub import DeterministicStubProvider

click.UsageError.exit_code = 1

_USER_ERRORS = (
    ConfigError,
    scene_mod.SceneParseError,
    graph_mod.GraphError,
    context_mod.ContextError,
    qa_mod.QaGenerationError,
    dataset_mod.DatasetError,
    papers_mod.PaperIngestError,
    video_mod.VideoIngestError,
    FileNotFoundError,
    json.JSONDecodeError,
    ValueError,
)
_PROVIDER_ERRORS = (ProviderError, ProviderContentError, RetriesExhausted, EmbeddingError)


def _stage_command(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except _PROVIDER_ERRORS as exc:
            click.echo(f"provider failure: {exc}", err=True)
            sys.exit(2)
        except _USER_ERRORS as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)

    return wrapper


# ---------------------------------------------------------------------------
# Shared plumbing


def _load_config(config_path, seed):
    config = PipelineConfig.load(config_path)
    if seed is not None:
        config.seed = seed
    return config


def _gateway(config: PipelineConfig, stub: bool, log_path=None) -> Gateway:
    if stub or not config.provider_endpoint:
        provider = DeterministicStubProvider()
    else:
        provider = HttpProvider(config.provider_endpoint, api_key=config.api_key)
    return Gateway(
        provider,
        config.generation_model,
        permit_limit=config.concurrency,
        log_path=log_path,
    )


def _embedder(config: PipelineConfig, recorded_path=None):
    if recorded_path:
        return RecordedEmbeddings.load(recorded_path, fallback=DeterministicEmbedder())
    if config.embed_endpoint:
        return HttpEmbeddingClient(config.embed_endpoint)
    return DeterministicEmbedder()


def _read_jsonl(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def _write_jsonl_atomic(path, records: list[dict]) -> str:
    payload = "".join(
        json.dumps(r, ensure_ascii=False) + "\n" for r in records
    )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _fingerprint(stage: str, seed: int, inputs: list) -> str:
    hasher = hashlib.sha256(f"{stage}:{seed}".encode("utf-8"))
    for item in inputs:
        hasher.update(b"\x1f")
        p = Path(item)
        if p.exists():
            hasher.update(p.read_bytes())
    return hasher.hexdigest()


def _sidecar(out) -> Path:
    return Path(str(out) + ".stage.json")


def _stage_complete(out, fingerprint: str) -> bool:
    side = _sidecar(out)
    if not side.exists() or not Path(out).exists():
        return False
    try:
        return json.loads(side.read_text())["fingerprint"] == fingerprint
    except (json.JSONDecodeError, KeyError):
        return False


def _mark_stage(out, fingerprint: str, output_sha: str) -> None:
    _sidecar(out).write_text(
        json.dumps({"fingerprint": fingerprint, "output_sha256": output_sha}) + "\n"
    )


def _common_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True),
                      default=None, help="YAML configuration file.")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Override the configured seed.")(fn)
    fn = click.option("--stub/--live", default=True,
                      help="Use the offline deterministic provider (default) or the "
                           "configured HTTP endpoint.")(fn)
    fn = click.option("--log", "log_path", type=click.Path(), default=None,
                      help="Append-only JSONL exchange log.")(fn)
    return fn


@click.group()
def main():
    """Cross-modal multi-hop QA dataset pipeline."""


# ---------------------------------------------------------------------------
# Stage implementations (shared by the individual commands and run-all)


def _run_ingest_scene(config, scenes_path, out, n_sets):
    result = scene_mod.parse_scene_file(scenes_path)
    for diag in result.diagnostics:
        click.echo(f"warning: {diag}", err=True)
    filtered = {}
    for g in result.graphs:
        fg = graph_mod.filter_unique_entities(g)
        if fg.objects:
            filtered[fg.image_id] = fg
    if not filtered:
        raise scene_mod.SceneParseError("no usable images after uniqueness filtering")
    rng = random.Random(f"{config.seed}:ingest-scene")
    image_sets = scene_mod.sample_image_sets(
        sorted(filtered), rng, n_sets, count_range=config.image_count_range
    )
    records = []
    for image_ids in image_sets:
        merged = graph_mod.merge_scene_graphs([filtered[i] for i in image_ids])
        records.append(
            {"graph": merged.to_json_dict(), "image_refs": list(image_ids),
             "context": None}
        )
    return _write_jsonl_atomic(out, records)


def _run_augment(config, gateway, in_path, out):
    records = _read_jsonl(in_path)
    out_records = []
    for i, record in enumerate(records):
        graph = graph_mod.ContentGraph.from_json_dict(record["graph"])
        if graph.domain == "SP":
            out_records.append(record)
            continue
        rng = random.Random(f"{config.seed}:augment:{i}")
        augmented, dropped = augment_mod.augment_graph(
            gateway, graph, rng, nodes_per_image=config.nodes_per_image
        )
        for item in dropped:
            click.echo(f"warning: dropped triple: {item.get('reason')}", err=True)
        record = dict(record)
        record["graph"] = augmented.to_json_dict()
        out_records.append(record)
    return _write_jsonl_atomic(out, out_records)


def _run_gen_context(config, gateway, in_path, out):
    records = _read_jsonl(in_path)
    out_records = []
    for i, record in enumerate(records):
        graph = graph_mod.ContentGraph.from_json_dict(record["graph"])
        if graph.domain == "SP":
            out_records.append(record)
            continue
        rng = random.Random(f"{config.seed}:context:{i}")
        try:
            contexts = []
            if graph.domain == "VF":
                sub = graph_mod.extract_full_context_view(graph)
                style = context_mod.choose_style(rng)
                text = context_mod.generate_context(gateway, graph, sub, style)
                contexts.append(
                    context_mod.GeneratedContext(None, style, text).to_json_dict()
                )
            else:
                assignment = graph_mod.assign_cross_image_edges(graph, rng)
                for image_index in range(graph.image_count):
                    sub = graph_mod.extract_context_subgraph(
                        graph, image_index, assignment
                    )
                    style = context_mod.choose_style(rng)
                    text = context_mod.generate_context(gateway, graph, sub, style)
                    contexts.append(
                        context_mod.GeneratedContext(
                            image_index, style, text
                        ).to_json_dict()
                    )
        except (context_mod.ContextError, graph_mod.GraphError) as exc:
            click.echo(f"warning: sample {i} dropped: {exc}", err=True)
            continue
        record = dict(record)
        record["contexts"] = contexts
        record["context"] = "\n\n".join(c["text"] for c in contexts)
        out_records.append(record)
    return _write_jsonl_atomic(out, out_records)


def _run_gen_qa(config, gateway, in_path, out):
    records = _read_jsonl(in_path)
    out_records = []
    for i, record in enumerate(records):
        graph = graph_mod.ContentGraph.from_json_dict(record["graph"])
        rng = random.Random(f"{config.seed}:qa:{i}")
        qa_records = qa_mod.generate_qa_for_graph(
            gateway,
            graph,
            rng,
            config.hop_distribution_for(graph.domain),
            qa_cap=config.qa_per_sample,
        )
        if not qa_records:
            click.echo(f"warning: sample {i} produced no QA pairs", err=True)
            continue
        record = dict(record)
        record["qa"] = [r.to_json_dict() for r in qa_records]
        out_records.append(record)
    return _write_jsonl_atomic(out, out_records)


def _run_filter(config, gateway, in_path, out, ledger_path):
    records = _read_jsonl(in_path)
    items = []
    graphs = []
    for record in records:
        graph = graph_mod.ContentGraph.from_json_dict(record["graph"])
        graphs.append(graph)
        for raw in record.get("qa", []):
            items.append((qa_mod.QARecord.from_json_dict(raw), graph))
    survivors, ledger = filters_mod.run_filters(items, gateway, config.judge_models)
    surviving_ids = {r.record_id: r for r in survivors}
    out_records = []
    for record in records:
        kept = [
            surviving_ids[raw["record_id"]].to_json_dict()
            for raw in record.get("qa", [])
            if raw["record_id"] in surviving_ids
        ]
        if not kept:
            continue
        record = dict(record)
        record["qa"] = kept
        out_records.append(record)
    if ledger_path:
        ledger.write_jsonl(ledger_path)
    return _write_jsonl_atomic(out, out_records), ledger


def _run_package(config, in_path, out, split, manifest_path, training_out):
    records = _read_jsonl(in_path)
    samples = []
    for record in records:
        graph = graph_mod.ContentGraph.from_json_dict(record["graph"])
        context_text = record.get("context") or ""
        image_refs = [str(r) for r in record["image_refs"]]
        samples.append(
            dataset_mod.DatasetSample(
                sample_id=dataset_mod.make_sample_id(
                    graph.domain, image_refs, context_text
                ),
                domain=graph.domain,
                image_refs=image_refs,
                context=context_text,
                qa=[qa_mod.QARecord.from_json_dict(r) for r in record["qa"]],
                split=split,
            )
        )
    if split == "test":
        samples = dataset_mod.restrict_test_single_turn(samples)
    manifest = dataset_mod.write_dataset(samples, out)
    if manifest_path:
        Path(manifest_path).write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    if training_out:
        _write_jsonl_atomic(training_out, dataset_mod.to_training_format(samples))
    return manifest


# ---------------------------------------------------------------------------
# Commands


@main.command("ingest-scene")
@click.argument("scenes", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--sets", "n_sets", type=int, default=10, show_default=True,
              help="Number of image sets to sample.")
@_common_options
@_stage_command
def ingest_scene(scenes, out, n_sets, config_path, seed, stub, log_path):
    """Parse scene-graph annotations and emit merged content graphs."""
    config = _load_config(config_path, seed)
    fp = _fingerprint("ingest-scene", config.seed, [scenes]) + f":{n_sets}"
    if _stage_complete(out, fp):
        click.echo("ingest-scene: up to date, skipping")
        return
    sha = _run_ingest_scene(config, scenes, out, n_sets)
    _mark_stage(out, fp, sha)
    click.echo(f"ingest-scene: wrote {out}")


@main.command("ingest-video")
@click.option("--captions", required=True, type=click.Path(exists=True),
              help="JSON list of {text, start, end} caption records.")
@click.option("--frames", required=True, type=click.Path(exists=True),
              help="JSON list of {time, ref[, embedding]} frame records.")
@click.option("--out", required=True, type=click.Path())
@click.option("--embeddings", "recorded_path", type=click.Path(exists=True),
              default=None, help="Recorded embeddings JSON store.")
@_common_options
@_stage_command
def ingest_video(captions, frames, out, recorded_path, config_path, seed, stub, log_path):
    """Select one frame per caption and convert captions to a content graph."""
    config = _load_config(config_path, seed)
    gateway = _gateway(config, stub, log_path)
    embedder = _embedder(config, recorded_path)
    caption_list = video_mod.parse_captions(
        json.loads(Path(captions).read_text(encoding="utf-8"))
    )
    frame_raw = json.loads(Path(frames).read_text(encoding="utf-8"))
    frame_list = []
    for rec in frame_raw:
        embedding = rec.get("embedding")
        if embedding is None:
            embedding = embedder.embed("clip-image", [str(rec["ref"])])[0]
        frame_list.append(
            video_mod.Frame(
                timestamp_s=float(rec["time"]), ref=str(rec["ref"]),
                embedding=embedding,
            )
        )
    caption_vecs = embedder.embed("clip-text", [c.text for c in caption_list])
    chosen = video_mod.select_frames(frame_list, caption_list, caption_vecs)
    _, graph = video_mod.captions_to_graph(gateway, caption_list)
    record = {
        "graph": graph.to_json_dict(),
        "image_refs": [frame_list[i].ref for i in chosen],
        "context": None,
    }
    _write_jsonl_atomic(out, [record])
    click.echo(f"ingest-video: wrote {out}")


@main.command("ingest-paper")
@click.option("--tex", required=True, type=click.Path(exists=True))
@click.option("--figures", required=True, type=click.Path(exists=True),
              help="JSON list of {label, image, caption} figure records.")
@click.option("--out", required=True, type=click.Path())
@click.option("--embeddings", "recorded_path", type=click.Path(exists=True),
              default=None, help="Recorded embeddings JSON store.")
@click.option("--threshold", type=float, default=None,
              help="Sentence-removal cosine threshold.")
@_common_options
@_stage_command
def ingest_paper(tex, figures, out, recorded_path, threshold, config_path, seed,
                 stub, log_path):
    """Extract a content graph and scrubbed textual context from TeX source."""
    config = _load_config(config_path, seed)
    gateway = _gateway(config, stub, log_path)
    embedder = _embedder(config, recorded_path)
    figure_list = [
        papers_mod.FigureInfo(
            label=f["label"], image_ref=f.get("image", ""), caption=f.get("caption", "")
        )
        for f in json.loads(Path(figures).read_text(encoding="utf-8"))
    ]
    result = papers_mod.ingest_paper(
        gateway,
        Path(tex).read_text(encoding="utf-8"),
        figure_list,
        embedder,
        threshold=threshold
        if threshold is not None
        else config.sentence_removal_threshold,
    )
    record = {
        "graph": result.graph.to_json_dict(),
        "image_refs": [f.image_ref or f.label for f in figure_list],
        "context": result.context,
    }
    _write_jsonl_atomic(out, [record])
    click.echo(f"ingest-paper: wrote {out}")


@main.command("augment")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@_common_options
@_stage_command
def augment(in_path, out, config_path, seed, stub, log_path):
    """Attach generated textual entities and relations to each graph."""
    config = _load_config(config_path, seed)
    fp = _fingerprint("augment", config.seed, [in_path])
    if _stage_complete(out, fp):
        click.echo("augment: up to date, skipping")
        return
    gateway = _gateway(config, stub, log_path)
    sha = _run_augment(config, gateway, in_path, out)
    _mark_stage(out, fp, sha)
    click.echo(f"augment: wrote {out}")


@main.command("gen-context")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@_common_options
@_stage_command
def gen_context(in_path, out, config_path, seed, stub, log_path):
    """Generate the per-image narrative context for each sample."""
    config = _load_config(config_path, seed)
    fp = _fingerprint("gen-context", config.seed, [in_path])
    if _stage_complete(out, fp):
        click.echo("gen-context: up to date, skipping")
        return
    gateway = _gateway(config, stub, log_path)
    sha = _run_gen_context(config, gateway, in_path, out)
    _mark_stage(out, fp, sha)
    click.echo(f"gen-context: wrote {out}")


@main.command("gen-qa")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@_common_options
@_stage_command
def gen_qa(in_path, out, config_path, seed, stub, log_path):
    """Sample chains and generate validated QA pairs with CoT traces."""
    config = _load_config(config_path, seed)
    fp = _fingerprint("gen-qa", config.seed, [in_path])
    if _stage_complete(out, fp):
        click.echo("gen-qa: up to date, skipping")
        return
    gateway = _gateway(config, stub, log_path)
    sha = _run_gen_qa(config, gateway, in_path, out)
    _mark_stage(out, fp, sha)
    click.echo(f"gen-qa: wrote {out}")


@main.command("filter")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--ledger", "ledger_path", type=click.Path(), default=None)
@_common_options
@_stage_command
def filter_cmd(in_path, out, ledger_path, config_path, seed, stub, log_path):
    """Apply the staged filter cascade to generated QA pairs."""
    config = _load_config(config_path, seed)
    fp = _fingerprint("filter", config.seed, [in_path])
    if _stage_complete(out, fp):
        click.echo("filter: up to date, skipping")
        return
    gateway = _gateway(config, stub, log_path)
    sha, ledger = _run_filter(
        config, gateway, in_path, out, ledger_path or f"{out}.ledger.jsonl"
    )
    _mark_stage(out, fp, sha)
    click.echo(f"filter: wrote {out} ({ledger.counts})")


@main.command("package")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--split", type=click.Choice(["train", "test"]), default="train",
              show_default=True)
@click.option("--manifest", "manifest_path", type=click.Path(), default=None)
@click.option("--training-out", type=click.Path(), default=None,
              help="Also emit direct/CoT conversation records.")
@_common_options
@_stage_command
def package(in_path, out, split, manifest_path, training_out, config_path, seed,
            stub, log_path):
    """Assemble the final dataset JSONL plus its manifest."""
    config = _load_config(config_path, seed)
    manifest = _run_package(
        config, in_path, out, split,
        manifest_path or f"{out}.manifest.json", training_out,
    )
    click.echo(
        f"package: {manifest['samples']} samples, {manifest['qa_pairs']} QA pairs, "
        f"sha256 {manifest['sha256']}"
    )


@main.command("stats")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--json", "as_json", is_flag=True, default=False)
@_stage_command
def stats(in_path, as_json):
    """Print Table-style statistics for a packaged dataset."""
    samples = dataset_mod.read_dataset(in_path)
    table = dataset_mod.compute_stats(samples)
    if as_json:
        click.echo(json.dumps(table, indent=2, sort_keys=True))
    else:
        click.echo(dataset_mod.render_stats_table(table))


@main.command("eval")
@click.option("--pred", required=True, type=click.Path(exists=True),
              help='Predictions JSONL: one {"id", "response"} per line.')
@click.option("--test", "test_path", required=True, type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["direct", "cot"]), default="cot",
              show_default=True)
@click.option("--json-out", type=click.Path(), default=None)
@_stage_command
def eval_cmd(pred, test_path, mode, json_out):
    """Score predictions against a packaged test set (EM / token F1)."""
    samples = dataset_mod.read_dataset(test_path)
    items = [
        evalkit.EvalItem(
            item_id=qa.record_id,
            question=qa.question,
            answer=qa.answer,
            domain=sample.domain,
            hop_count=dataset_mod.hop_bucket(qa.hop_count),
        )
        for sample in samples
        for qa in sample.qa
    ]
    predictions = evalkit.load_predictions_jsonl(pred)
    result = evalkit.evaluate_run(predictions, items, mode=mode)
    click.echo(result.to_text_table())
    if result.missing_ids:
        click.echo(f"missing predictions: {len(result.missing_ids)}", err=True)
    if result.unknown_ids:
        click.echo(f"predictions without test items: {len(result.unknown_ids)}", err=True)
    if json_out:
        Path(json_out).write_text(
            json.dumps(result.to_json_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )


@main.command("audit-export")
@click.option("--in", "in_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@_stage_command
def audit_export(in_path, out_dir):
    """Emit one rater bundle per sample: images, context, QA, and the chain
    provenance behind each question."""
    samples = dataset_mod.read_dataset(in_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for sample in samples:
        bundle = {
            "sample_id": sample.sample_id,
            "domain": sample.domain,
            "images": sample.image_refs,
            "context": sample.context,
            "qa": [
                {
                    "record_id": qa.record_id,
                    "question": qa.question,
                    "answer": qa.answer,
                    "cot": qa.cot_sentences,
                    "hop_count": qa.hop_count,
                    "subgraph": qa.triples,
                }
                for qa in sample.qa
            ],
        }
        (out / f"{sample.sample_id}.json").write_text(
            json.dumps(bundle, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
    click.echo(f"audit-export: wrote {len(samples)} bundles to {out_dir}")


@main.command("run-all")
@click.argument("scenes", type=click.Path(exists=True))
@click.option("--workdir", required=True, type=click.Path())
@click.option("--sets", "n_sets", type=int, default=10, show_default=True)
@click.option("--split", type=click.Choice(["train", "test"]), default="train",
              show_default=True)
@_common_options
@_stage_command
def run_all(scenes, workdir, n_sets, split, config_path, seed, stub, log_path):
    """Run the full natural-image pipeline end to end in one call."""
    config = _load_config(config_path, seed)
    gateway = _gateway(config, stub, log_path)
    wd = Path(workdir)
    wd.mkdir(parents=True, exist_ok=True)
    graphs = wd / "graphs.jsonl"
    augmented = wd / "augmented.jsonl"
    contexts = wd / "contexts.jsonl"
    qa_file = wd / "qa.jsonl"
    filtered = wd / "filtered.jsonl"
    final = wd / "dataset.jsonl"

    _run_ingest_scene(config, scenes, graphs, n_sets)
    _run_augment(config, gateway, graphs, augmented)
    _run_gen_context(config, gateway, augmented, contexts)
    _run_gen_qa(config, gateway, contexts, qa_file)
    _run_filter(config, gateway, qa_file, filtered, wd / "filter.ledger.jsonl")
    manifest = _run_package(
        config, filtered, final, split, wd / "dataset.manifest.json", None
    )
    click.echo(f"run-all: dataset sha256 {manifest['sha256']}")


if __name__ == "__main__":
    main()
