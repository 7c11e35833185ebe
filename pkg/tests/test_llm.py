import hashlib
import json

import pytest

from crossqa.llm import (
    JSON_REMINDER,
    Gateway,
    JUDGE_DECODING,
    ParseFailure,
    ProviderContentError,
    ProviderError,
    RetriesExhausted,
    ScriptedProvider,
    TEXT_NODE_TEMPLATES,
    TemplateError,
    parse_payload,
    registry,
    render,
)
from crossqa.stub import DeterministicStubProvider
from tests.conftest import scripted_gateway

# Frozen digests of the versioned prompt assets; a diff here must be a
# deliberate prompt revision, not an accident.
TEMPLATE_DIGESTS = {
    "caption_to_graph": "c016d96630c75b133fd26b2951fb7e6454a291c7dd0a293577c1d959d798a048",
    "context_generation": "1e23d13c088fd6d2324c17134a61b738a7ccc77ed0d34ff7722b97b073fc1545",
    "cot_generation": "3403ea6f819980f691633d258e3e7554258c7f19f78c8843db9cbf63ec24f2bd",
    "edge_generation": "75e66f28dc1f6a488c0f014345740a3bee8989f7b019623f91cb077ec1827c51",
    "entity_inventory": "0ff6cf8d665ef48bf2603d4acb43bb4a33fd62b7f95fcb319c5844b5827debea",
    "eval_cot": "2ee995511f661b16e9be289022c9208836e5d49c0c1b60f3799bd90adf3ef716",
    "eval_direct": "f6e3ad090aee8572ccf2f31079c8aab3c0526836352a944ab54b9a100d826b95",
    "modality_judge": "e396dbcf9275136d9d7e5a76fe02a1eabc66af44f7492a362dd624b7cff13bd4",
    "paper_fig_paragraph": "9978c4623d9accc7561041b22853c7fc63c9cbc0fc0c01e068a0052c20681aa6",
    "paper_nonfig_paragraph": "e3aad89fc25276393a16a3795c951d00b29ace0cc62b50efa5f7122791c5ab91",
    "qa_generation": "cab0dd69085b11baf5892b5308ce399d4b4d61db5c2a8013df8ac9ee1dec5d80",
    "text_node_association": "df31052a3204f46531f3608572c14ba4978b8c8f15e28f3126e3fb65529b5ede",
    "text_node_authorship": "d93c0488b937c075748a42c678b751926b14cf5b49c4f53c41555da536416fd7",
    "text_node_event": "02b02e4b1b25dfa956c81c6573a1e3b66672c34829bfadd0016577700fe72974",
    "text_node_location": "c6f3ae4fc1994d7200c11d761d82b1b03f505f5728f570446d9cc3c6d59421f8",
    "text_node_ownership": "219cac31224746f768e3e0066e014941f2545d3116335107c2553287800e0aa2",
    "text_node_temporal": "cfd577446f03e301ddfa31b12019f3c3b0377d332edca3b95703264fa7184bc0",
}


def test_registry_complete_and_frozen():
    reg = registry()
    assert set(reg) == set(TEMPLATE_DIGESTS)
    for tid, template in reg.items():
        digest = hashlib.sha256(template.body.encode("utf-8")).hexdigest()
        assert digest == TEMPLATE_DIGESTS[tid], f"template {tid} changed"


def test_render_substitutes_exactly():
    text = render(
        "text_node_authorship",
        {"object": "red bicycle", "image_caption": "a street", "object_caption": "a bike"},
    )
    assert "red bicycle" in text and "{object}" not in text


def test_render_missing_binding_errors():
    with pytest.raises(TemplateError, match="missing"):
        render("text_node_authorship", {"object": "x"})


def test_render_unknown_binding_errors():
    with pytest.raises(TemplateError, match="unknown placeholders"):
        render("entity_inventory", {"document": "x", "extra": "y"})


def test_render_unknown_template_errors():
    with pytest.raises(TemplateError):
        render("no_such_template", {})


# ---------------------------------------------------------------------------
# parse_payload


LIST_SCHEMA = {"type": "array", "items": {"type": "string"}}


def test_parse_plain_json():
    assert parse_payload('["a", "b"]', LIST_SCHEMA) == ["a", "b"]


def test_parse_fenced_json():
    assert parse_payload('```json\n["a"]\n```', LIST_SCHEMA) == ["a"]


def test_parse_prose_prefix():
    assert parse_payload('Sure, here you go: ["a"] hope that helps', LIST_SCHEMA) == ["a"]


def test_parse_no_json_is_failure():
    result = parse_payload("no structured data here", LIST_SCHEMA)
    assert isinstance(result, ParseFailure)


def test_parse_invalid_json_is_failure():
    result = parse_payload('["unterminated', LIST_SCHEMA)
    assert isinstance(result, ParseFailure)


def test_parse_schema_violation_is_failure():
    result = parse_payload("[1, 2]", LIST_SCHEMA)
    assert isinstance(result, ParseFailure)
    assert "schema" in result.reason


def test_parse_free_text_passthrough():
    assert parse_payload("  plain answer \n", None) == "plain answer"


# ---------------------------------------------------------------------------
# Gateway retry semantics


def test_transport_retry_then_success():
    gateway, provider = scripted_gateway(
        [ProviderError("boom"), ProviderError("boom"), "ok"]
    )
    text, attempts = gateway.complete("p", JUDGE_DECODING)
    assert text == "ok" and attempts == 3
    assert len(provider.calls) == 3


def test_retries_exhausted_carries_ledger():
    gateway, _ = scripted_gateway([ProviderError(f"e{i}") for i in range(3)])
    with pytest.raises(RetriesExhausted) as exc:
        gateway.complete("p", JUDGE_DECODING)
    assert len(exc.value.attempts) == 3
    assert "e0" in exc.value.attempts[0]


def test_content_error_not_retried():
    gateway, provider = scripted_gateway([ProviderContentError("refused"), "never"])
    with pytest.raises(ProviderContentError):
        gateway.complete("p", JUDGE_DECODING)
    assert len(provider.calls) == 1


def test_json_reminder_retry_once():
    gateway, provider = scripted_gateway(["not json at all", '["fixed"]'])
    exchange = gateway.exchange("entity_inventory", {"document": "Alpha Beta"})
    assert exchange.ok() and exchange.parsed_payload == ["fixed"]
    assert exchange.attempts == 2
    assert provider.calls[1]["prompt"].endswith(JSON_REMINDER)


def test_json_reminder_failure_is_value():
    gateway, provider = scripted_gateway(["junk", "more junk"])
    exchange = gateway.exchange("entity_inventory", {"document": "Alpha"})
    assert not exchange.ok()
    assert isinstance(exchange.parsed_payload, ParseFailure)
    assert len(provider.calls) == 2


def test_exchange_log_jsonl(tmp_path):
    log = tmp_path / "exchanges.jsonl"
    provider = ScriptedProvider(responses=['["a"]'])
    gateway = Gateway(provider, "m", log_path=str(log), sleep=lambda s: None)
    gateway.exchange("entity_inventory", {"document": "Alpha"})
    lines = log.read_text().splitlines()
    assert len(lines) == 1
    record = json.loads(lines[0])
    assert record["template_id"] == "entity_inventory"
    assert record["parsed_payload"] == ["a"]
    assert record["parse_failure"] is None


# ---------------------------------------------------------------------------
# Render -> stub -> parse round trip for every template


def _sample_bindings(template_id):
    text_node = {
        "object": "red bicycle",
        "image_caption": "A street scene with a parked bicycle.",
        "object_caption": "A red bicycle leaning on a wall.",
    }
    triples = [
        {"subject": "red bicycle", "relation": "purchased from", "object": "shop (Harlan Cycles)"},
        {"subject": "shop (Harlan Cycles)", "relation": "founded in", "object": "year (2005)"},
    ]
    bindings = {
        "edge_generation": {
            "list_of_entities": json.dumps(["shop (Harlan Cycles)", "year (2005)"])
        },
        "context_generation": {
            "context_type": "an encyclopedia entry",
            "entities": json.dumps(["red bicycle (Image 1)", "shop (Harlan Cycles)"]),
            "relations": json.dumps(
                [{"subject": "red bicycle (Image 1)", "relation": "purchased from",
                  "object": "shop (Harlan Cycles)"}]
            ),
        },
        "qa_generation": {
            "triples": ",\n  ".join(json.dumps(t) for t in triples),
            "last_object": "year (2005)",
            "intermediate_objects": json.dumps(["shop (Harlan Cycles)"]),
        },
        "cot_generation": {
            "question": "In which year was the shop founded?",
            "answer": "2005",
            "subgraph": json.dumps(
                [{"subject": "red bicycle", "relation": "purchased from",
                  "object": "shop (Harlan Cycles)", "image": "Image 1"}]
            ),
        },
        "caption_to_graph": {
            "annotated": json.dumps(
                [{"scene": 1, "start": 0.0, "end": 2.0,
                  "text": "A woman walks across the hall."}]
            )
        },
        "paper_nonfig_paragraph": {
            "entities_json": json.dumps(["ResNet", "ImageNet"]),
            "paragraph": "We train ResNet on ImageNet for ninety epochs.",
        },
        "paper_fig_paragraph": {
            "figures_json": json.dumps([{"label": "Figure 1", "caption": "Accuracy curves."}]),
            "entities_json": json.dumps(["ResNet", "VGG"]),
            "sentences_text": "0: ResNet outperforms VGG in Figure 1.\n1: Both converge.",
        },
        "entity_inventory": {"document": "We compare ResNet and VGG on ImageNet."},
        "modality_judge": {
            "facts": "The red bicycle was purchased from the shop.",
            "question": "Where was the red bicycle purchased?",
        },
        "eval_direct": {"context": "The shop opened in 2005.", "question": "When did it open?"},
        "eval_cot": {"context": "The shop opened in 2005.", "question": "When did it open?"},
    }
    if template_id in TEXT_NODE_TEMPLATES:
        return text_node
    return bindings[template_id]


@pytest.mark.parametrize("template_id", sorted(registry()))
def test_round_trip_stub_parse(template_id):
    gateway = Gateway(DeterministicStubProvider(), "stub-model", sleep=lambda s: None)
    exchange = gateway.exchange(template_id, _sample_bindings(template_id))
    assert exchange.ok(), exchange.parsed_payload
    assert exchange.attempts == 1
