import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from crossqa.cli import main
from crossqa.dataset import read_dataset

SCENES = str(Path(__file__).parent / "fixtures" / "scenes.json")


@pytest.fixture
def runner():
    return CliRunner()


def run_ok(runner, args):
    result = runner.invoke(main, args)
    assert result.exit_code == 0, result.output
    return result


def test_run_all_deterministic(runner, tmp_path):
    outs = []
    for name in ("w1", "w2"):
        wd = tmp_path / name
        result = run_ok(
            runner,
            ["run-all", SCENES, "--workdir", str(wd), "--sets", "4", "--seed", "7"],
        )
        sha_line = [l for l in result.output.splitlines() if "sha256" in l][-1]
        outs.append((sha_line, (wd / "dataset.jsonl").read_bytes()))
    assert outs[0][0] == outs[1][0]
    assert outs[0][1] == outs[1][1]
    samples = read_dataset(tmp_path / "w1" / "dataset.jsonl")
    assert samples and all(s.qa for s in samples)


def test_stage_chain_and_resume(runner, tmp_path):
    graphs = tmp_path / "graphs.jsonl"
    augmented = tmp_path / "augmented.jsonl"
    run_ok(runner, ["ingest-scene", SCENES, "--out", str(graphs), "--sets", "3",
                    "--seed", "3"])
    assert graphs.exists() and Path(str(graphs) + ".stage.json").exists()

    run_ok(runner, ["augment", "--in", str(graphs), "--out", str(augmented),
                    "--seed", "3"])
    first_bytes = augmented.read_bytes()

    # Unchanged input + seed: the stage is skipped and output untouched.
    result = run_ok(runner, ["augment", "--in", str(graphs), "--out", str(augmented),
                             "--seed", "3"])
    assert "up to date" in result.output
    assert augmented.read_bytes() == first_bytes

    # A different seed invalidates the fingerprint and reruns the stage.
    result = run_ok(runner, ["augment", "--in", str(graphs), "--out", str(augmented),
                             "--seed", "4"])
    assert "up to date" not in result.output


def test_filter_on_empty_input_succeeds(runner, tmp_path):
    empty = tmp_path / "qa.jsonl"
    empty.write_text("")
    out = tmp_path / "filtered.jsonl"
    result = run_ok(runner, ["filter", "--in", str(empty), "--out", str(out)])
    assert out.read_text() == ""
    assert "survived" in result.output


def test_malformed_scenes_exit_code_1(runner, tmp_path):
    bad = tmp_path / "scenes.json"
    bad.write_text("{not json")
    result = runner.invoke(
        main, ["ingest-scene", str(bad), "--out", str(tmp_path / "g.jsonl")]
    )
    assert result.exit_code == 1


def test_missing_input_exit_code_1(runner, tmp_path):
    result = runner.invoke(
        main, ["augment", "--in", str(tmp_path / "absent.jsonl"),
               "--out", str(tmp_path / "o.jsonl")]
    )
    assert result.exit_code == 1


def test_unreachable_endpoint_exit_code_2(runner, tmp_path):
    graphs = tmp_path / "graphs.jsonl"
    run_ok(runner, ["ingest-scene", SCENES, "--out", str(graphs), "--sets", "1"])
    config = tmp_path / "config.yaml"
    config.write_text("provider_endpoint: http://127.0.0.1:9/v1\n")
    result = runner.invoke(
        main,
        ["augment", "--in", str(graphs), "--out", str(tmp_path / "a.jsonl"),
         "--config", str(config), "--live"],
    )
    assert result.exit_code == 2
    assert "provider failure" in result.output


def test_stats_and_audit_export(runner, tmp_path):
    wd = tmp_path / "wd"
    run_ok(runner, ["run-all", SCENES, "--workdir", str(wd), "--sets", "4",
                    "--seed", "7"])
    dataset = wd / "dataset.jsonl"

    result = run_ok(runner, ["stats", "--in", str(dataset)])
    assert "samples" in result.output and "NI" in result.output

    result = run_ok(runner, ["stats", "--in", str(dataset), "--json"])
    stats = json.loads(result.output)
    assert stats["train"]["NI"]["samples"] >= 1

    out_dir = tmp_path / "audit"
    result = run_ok(runner, ["audit-export", "--in", str(dataset),
                             "--out-dir", str(out_dir)])
    bundles = list(out_dir.glob("*.json"))
    assert bundles
    bundle = json.loads(bundles[0].read_text())
    assert {"sample_id", "context", "qa"} <= set(bundle)
    assert bundle["qa"][0]["subgraph"]


def test_package_test_split_single_turn_and_eval(runner, tmp_path):
    wd = tmp_path / "wd"
    run_ok(runner, ["run-all", SCENES, "--workdir", str(wd), "--sets", "4",
                    "--seed", "7", "--split", "test"])
    samples = read_dataset(wd / "dataset.jsonl")
    assert samples and all(len(s.qa) == 1 for s in samples)

    preds = tmp_path / "preds.jsonl"
    with preds.open("w") as fh:
        for sample in samples:
            qa = sample.qa[0]
            fh.write(json.dumps(
                {"id": qa.record_id, "response": f"The answer is {qa.answer}."}
            ) + "\n")
    json_out = tmp_path / "scores.json"
    result = run_ok(runner, ["eval", "--pred", str(preds),
                             "--test", str(wd / "dataset.jsonl"),
                             "--json-out", str(json_out)])
    assert "overall" in result.output
    scores = json.loads(json_out.read_text())
    assert scores["overall"]["em"] == 1.0
    assert scores["overall"]["f1"] == 1.0


def test_manifest_written(runner, tmp_path):
    wd = tmp_path / "wd"
    run_ok(runner, ["run-all", SCENES, "--workdir", str(wd), "--sets", "3",
                    "--seed", "5"])
    manifest = json.loads((wd / "dataset.manifest.json").read_text())
    assert set(manifest) == {"samples", "qa_pairs", "domains", "sha256"}
    assert manifest["samples"] == len(read_dataset(wd / "dataset.jsonl"))
