import math

import pytest

from crossqa.dataset import (
    DatasetError,
    DatasetSample,
    compute_stats,
    hop_bucket,
    make_sample_id,
    read_dataset,
    render_stats_table,
    restrict_test_single_turn,
    to_training_format,
    write_dataset,
)
from crossqa.graph import ChainSubgraph
from crossqa.qa import QARecord


def make_qa(question="Q?", answer="A", hop=2, n_cot=2):
    chain = ChainSubgraph(
        edge_indices=(0,), node_sequence=("t0", "v0"), answer_node_id="v0",
        hop_count=hop, answer_kind="name", answer_value=answer,
    )
    cot = ["A step."] * (n_cot - 1) + [f"The answer is {answer}."]
    return QARecord(
        question=question, answer=answer, cot_sentences=cot, chain=chain,
        domain="NI", hop_count=hop, triples=[], banned_terms=[],
    )


def make_sample(domain="NI", n_qa=1, split="train", refs=None, context="ctx words here",
                hops=None):
    qa = [make_qa(question=f"Q{i}?", answer=f"A{i}", hop=(hops or [2] * n_qa)[i])
          for i in range(n_qa)]
    refs = refs if refs is not None else ["img0.jpg"]
    return DatasetSample(
        sample_id=make_sample_id(domain, refs, context) if split == "train"
        else make_sample_id(domain, refs, context),
        domain=domain, image_refs=refs, context=context, qa=qa, split=split,
    )


def test_sample_id_stable_and_content_addressed():
    a = make_sample_id("NI", ["x.jpg"], "ctx")
    b = make_sample_id("NI", ["x.jpg"], "ctx")
    c = make_sample_id("NI", ["x.jpg"], "other ctx")
    assert a == b and a != c and len(a) == 16


def test_validation_rules():
    with pytest.raises(DatasetError, match="image_refs"):
        make_sample(refs=[]).validate()
    with pytest.raises(DatasetError, match="no QA"):
        make_sample(n_qa=0).validate()
    with pytest.raises(DatasetError, match="single-turn"):
        make_sample(n_qa=2, split="test").validate()
    with pytest.raises(DatasetError, match="bad split"):
        make_sample(split="dev").validate()


def test_restrict_test_single_turn():
    multi = make_sample(n_qa=3, split="test")
    train = make_sample(n_qa=3, split="train")
    out = restrict_test_single_turn([multi, train])
    assert len(out) == 4
    split_ids = [s.sample_id for s in out if s.split == "test"]
    assert split_ids == [f"{multi.sample_id}-{i}" for i in range(3)]
    for s in out:
        s.validate()
    # Context and refs carried to each split-out sample.
    assert all(s.context == multi.context for s in out[:3])


def test_write_read_round_trip_and_manifest(tmp_path):
    samples = [make_sample(domain="NI"), make_sample(domain="NI", context="other"),
               make_sample(domain="VF", n_qa=2)]
    path = tmp_path / "data.jsonl"
    manifest = write_dataset(samples, path)
    assert manifest["samples"] == 3
    assert manifest["qa_pairs"] == 4
    assert manifest["domains"] == {"NI": 2, "VF": 1}

    back = read_dataset(path)
    assert [s.to_json_dict() for s in back] == [s.to_json_dict() for s in samples]

    manifest2 = write_dataset(back, tmp_path / "data2.jsonl")
    assert manifest2["sha256"] == manifest["sha256"]


def test_training_format_two_records_per_sample():
    sample = make_sample(n_qa=3)
    records = to_training_format([sample])
    assert len(records) == 2
    assert {r["mode"] for r in records} == {"direct", "cot"}
    for record in records:
        assert len(record["turns"]) == 6  # three user/assistant pairs
        first_user = record["turns"][0]["content"]
        assert first_user.startswith(sample.context)
        assert record["turns"][2]["content"] == "Q1?"  # later turns: question only
    direct = next(r for r in records if r["mode"] == "direct")
    cot = next(r for r in records if r["mode"] == "cot")
    assert direct["turns"][1]["content"] == "A0"
    assert cot["turns"][1]["content"].endswith("The answer is A0.")


def test_training_format_skips_test_split():
    assert to_training_format([make_sample(split="test")]) == []


def test_hop_bucketing():
    assert [hop_bucket(h) for h in (1, 2, 3, 5)] == [2, 2, 3, 5]


def test_compute_stats_hand_arithmetic():
    samples = (
        [make_sample(domain="NI", refs=["a", "b"], context="one two three",
                     n_qa=2, hops=[1, 3])]
        + [make_sample(domain="NI", refs=["c"], context="four five", n_qa=1, hops=[2])]
        + [make_sample(domain="VF", refs=["d"], context="w " * 10, n_qa=1, hops=[4],
                       split="test")]
    )
    stats = compute_stats(samples)
    ni = stats["train"]["NI"]
    assert ni["samples"] == 2
    assert math.isclose(ni["avg_images_per_sample"], 1.5)
    assert math.isclose(ni["avg_text_tokens_per_sample"], 2.5)  # (3 + 2) / 2
    assert ni["qa"] == 3
    assert ni["hops"] == {"2": 2, "3": 1}  # the h=1 question lands in bucket 2
    vf = stats["test"]["VF"]
    assert vf["samples"] == 1 and vf["hops"] == {"4": 1}


def test_render_stats_table():
    stats = compute_stats([make_sample(domain="NI"), make_sample(domain="VF",
                                                                 context="x")])
    table = render_stats_table(stats)
    assert "NI" in table and "VF" in table and "2-hop qa" in table
    assert render_stats_table({}) == "(empty dataset)"
