"""Provider-agnostic text-model access: template rendering, completion with
retries, and schema-validated JSON extraction.

Prompt templates are versioned text assets under ``assets/``; a registry maps
template ids to their placeholder sets and expected payload schemas. Parsing
failure is a value (ParseFailure), not an exception, so the retry loop can
append a JSON reminder and try once more before failing the work item.
"""

from __future__ import annotations

import json
import re
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Optional, Protocol

import jsonschema

ASSET_PACKAGE = "crossqa.assets"

JSON_REMINDER = "\n\nReturn only valid JSON."

_TRIPLE_SCHEMA = {
    "type": "object",
    "properties": {
        "subject": {"type": "string"},
        "relation": {"type": "string"},
        "object": {"type": "string"},
    },
    "required": ["subject", "relation", "object"],
}

_QA_SCHEMA = {
    "type": "object",
    "properties": {"question": {"type": "string"}, "answer": {"type": "string"}},
    "required": ["question", "answer"],
}

_BUNDLE_SCHEMA = {
    "type": "object",
    "properties": {
        "entities": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "id": {"type": "string"},
                    "entity": {"type": "string"},
                    "attributes": {"type": "array", "items": {"type": "string"}},
                },
                "required": ["id", "entity", "attributes"],
            },
        },
        "scenes": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "scene": {"type": "string"},
                    "relations": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "properties": {
                                "source": {"type": "string"},
                                "target": {"type": ["string", "null"]},
                                "relation": {"type": "string"},
                            },
                            "required": ["source", "target", "relation"],
                        },
                    },
                },
                "required": ["scene", "relations"],
            },
        },
    },
    "required": ["entities", "scenes"],
}

_TEXT_RELATION_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "properties": {
            "source_entity": {"type": "string"},
            "target_entity": {"type": ["string", "null"]},
            "relationship_description": {"type": "string"},
        },
        "required": ["source_entity", "target_entity", "relationship_description"],
    },
}

_VISUAL_RELATION_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "properties": {
            "source_entity": {"type": "string"},
            "target_entity": {"type": ["string", "null"]},
            "relationship_description": {"type": "string"},
            "figure": {"type": "string"},
            "idx": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
        },
        "required": [
            "source_entity",
            "target_entity",
            "relationship_description",
            "figure",
            "idx",
        ],
    },
}

TEXT_NODE_TEMPLATES = (
    "text_node_authorship",
    "text_node_association",
    "text_node_temporal",
    # The following three categories are reconstructions authored in the
    # style of the first three (see docs/prompt_notes.md).
    "text_node_ownership",
    "text_node_location",
    "text_node_event",
)


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str
    placeholders: frozenset[str]
    expected_payload: Optional[dict]  # JSON schema; None means free text


def _load_body(template_id: str) -> str:
    return resources.files(ASSET_PACKAGE).joinpath(f"{template_id}.txt").read_text(
        encoding="utf-8"
    )


def _build_registry() -> dict[str, PromptTemplate]:
    specs: dict[str, tuple[set[str], Optional[dict]]] = {
        "edge_generation": ({"list_of_entities"}, {"type": "array", "items": _TRIPLE_SCHEMA}),
        "context_generation": ({"context_type", "entities", "relations"}, None),
        "qa_generation": ({"triples", "last_object", "intermediate_objects"}, _QA_SCHEMA),
        "cot_generation": ({"question", "answer", "subgraph"}, None),
        "caption_to_graph": ({"annotated"}, _BUNDLE_SCHEMA),
        "paper_nonfig_paragraph": ({"entities_json", "paragraph"}, _TEXT_RELATION_SCHEMA),
        "paper_fig_paragraph": (
            {"figures_json", "entities_json", "sentences_text"},
            _VISUAL_RELATION_SCHEMA,
        ),
        "entity_inventory": ({"document"}, {"type": "array", "items": {"type": "string"}}),
        "modality_judge": ({"facts", "question"}, None),
        "eval_direct": ({"context", "question"}, None),
        "eval_cot": ({"context", "question"}, None),
    }
    for tid in TEXT_NODE_TEMPLATES:
        specs[tid] = ({"object", "image_caption", "object_caption"}, _TRIPLE_SCHEMA)

    registry = {}
    for tid, (placeholders, schema) in specs.items():
        body = _load_body(tid)
        for name in placeholders:
            if "{%s}" % name not in body:
                raise ValueError(f"template {tid} missing declared placeholder {name}")
        registry[tid] = PromptTemplate(
            template_id=tid,
            body=body,
            placeholders=frozenset(placeholders),
            expected_payload=schema,
        )
    return registry


_REGISTRY: Optional[dict[str, PromptTemplate]] = None


def registry() -> dict[str, PromptTemplate]:
    global _REGISTRY
    if _REGISTRY is None:
        _REGISTRY = _build_registry()
    return _REGISTRY


class TemplateError(Exception):
    pass


def render(template_id: str, bindings: dict[str, str]) -> str:
    """Exact placeholder substitution; only declared placeholders are touched."""
    template = registry().get(template_id)
    if template is None:
        raise TemplateError(f"unknown template {template_id}")
    missing = template.placeholders - set(bindings)
    if missing:
        raise TemplateError(f"missing bindings for {template_id}: {sorted(missing)}")
    unknown = set(bindings) - template.placeholders
    if unknown:
        raise TemplateError(f"unknown placeholders for {template_id}: {sorted(unknown)}")
    text = template.body
    for name, value in bindings.items():
        text = text.replace("{%s}" % name, str(value))
    return text


# ---------------------------------------------------------------------------
# Payload parsing


@dataclass
class ParseFailure:
    reason: str


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def parse_payload(raw_completion: str, expected_payload: Optional[dict]):
    """Extract and validate the first JSON value in a completion.

    Strips code fences and leading prose. Returns the parsed value, or a
    ParseFailure carrying the reason (never raises).
    """
    if expected_payload is None:
        return raw_completion.strip()
    text = raw_completion
    fenced = _FENCE_RE.search(text)
    if fenced:
        text = fenced.group(1)
    start = None
    for i, ch in enumerate(text):
        if ch in "[{":
            start = i
            break
    if start is None:
        return ParseFailure("no JSON value found in completion")
    try:
        value, _ = json.JSONDecoder().raw_decode(text[start:])
    except json.JSONDecodeError as exc:
        return ParseFailure(f"invalid JSON: {exc}")
    try:
        jsonschema.validate(value, expected_payload)
    except jsonschema.ValidationError as exc:
        return ParseFailure(f"schema violation: {exc.message}")
    return value


# ---------------------------------------------------------------------------
# Providers and gateway


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.7
    max_tokens: int = 1024
    top_p: float = 1.0


GENERATION_DECODING = DecodingParams(temperature=0.7)
JUDGE_DECODING = DecodingParams(temperature=0.0)


class ProviderError(Exception):
    """Transient transport failure; eligible for retry."""


class ProviderContentError(Exception):
    """Provider-reported content refusal; not retried."""


class RetriesExhausted(Exception):
    def __init__(self, attempts: list[str]):
        super().__init__(f"retries exhausted after {len(attempts)} attempts")
        self.attempts = attempts


class Provider(Protocol):
    def complete(
        self,
        rendered_prompt: str,
        model_id: str,
        decoding: DecodingParams,
        template_id: Optional[str] = None,
    ) -> str: ...


class HttpProvider:
    """OpenAI-compatible chat-completions endpoint."""

    def __init__(self, endpoint: str, api_key: Optional[str] = None, timeout: float = 120.0):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout

    def complete(self, rendered_prompt, model_id, decoding, template_id=None):
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body = {
            "model": model_id,
            "messages": [{"role": "user", "content": rendered_prompt}],
            "temperature": decoding.temperature,
            "max_tokens": decoding.max_tokens,
            "top_p": decoding.top_p,
        }
        try:
            resp = requests.post(
                f"{self.endpoint}/chat/completions", json=body, headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise ProviderError(str(exc)) from exc
        if resp.status_code == 401:
            raise ProviderContentError("authentication failure")
        if resp.status_code >= 500 or resp.status_code == 429:
            raise ProviderError(f"HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise ProviderContentError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        payload = resp.json()
        try:
            return payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError) as exc:
            raise ProviderError(f"malformed provider response: {exc}") from exc


class ScriptedProvider:
    """Replays a scripted queue of responses (or a callable) for tests."""

    def __init__(self, responses=None, fn: Optional[Callable] = None):
        self.responses = list(responses or [])
        self.fn = fn
        self.calls: list[dict] = []

    def complete(self, rendered_prompt, model_id, decoding, template_id=None):
        self.calls.append(
            {"prompt": rendered_prompt, "model_id": model_id, "template_id": template_id}
        )
        if self.fn is not None:
            return self.fn(rendered_prompt, model_id, decoding, template_id)
        if not self.responses:
            raise ProviderError("scripted provider out of responses")
        item = self.responses.pop(0)
        if isinstance(item, Exception):
            raise item
        return item


@dataclass
class LlmExchange:
    template_id: str
    rendered_prompt: str
    model_id: str
    raw_completion: str
    parsed_payload: object  # validated value, or ParseFailure
    attempts: int

    def ok(self) -> bool:
        return not isinstance(self.parsed_payload, ParseFailure)

    def to_json_dict(self) -> dict:
        return {
            "template_id": self.template_id,
            "rendered_prompt": self.rendered_prompt,
            "model_id": self.model_id,
            "raw_completion": self.raw_completion,
            "parsed_payload": None
            if isinstance(self.parsed_payload, ParseFailure)
            else self.parsed_payload,
            "parse_failure": self.parsed_payload.reason
            if isinstance(self.parsed_payload, ParseFailure)
            else None,
            "attempts": self.attempts,
        }


class Gateway:
    """Completion with bounded retries/backoff, JSON validation, an in-flight
    permit limiter, and an append-only JSONL exchange log."""

    def __init__(
        self,
        provider: Provider,
        model_id: str,
        max_attempts: int = 3,
        backoff_base_s: float = 0.5,
        permit_limit: int = 8,
        log_path=None,
        sleep=time.sleep,
    ):
        self.provider = provider
        self.model_id = model_id
        self.max_attempts = max_attempts
        self.backoff_base_s = backoff_base_s
        self._permits = threading.BoundedSemaphore(permit_limit)
        self._log_lock = threading.Lock()
        self.log_path = log_path
        self.sleep = sleep

    def complete(
        self,
        rendered_prompt: str,
        decoding: DecodingParams,
        model_id: Optional[str] = None,
        template_id: Optional[str] = None,
    ) -> tuple[str, int]:
        """Returns (raw completion, attempts). Retries transport errors with
        exponential backoff up to max_attempts."""
        ledger: list[str] = []
        for attempt in range(1, self.max_attempts + 1):
            try:
                with self._permits:
                    text = self.provider.complete(
                        rendered_prompt,
                        model_id or self.model_id,
                        decoding,
                        template_id=template_id,
                    )
                return text, attempt
            except ProviderError as exc:
                ledger.append(f"attempt {attempt}: {exc}")
                if attempt < self.max_attempts:
                    self.sleep(self.backoff_base_s * (2 ** (attempt - 1)))
        raise RetriesExhausted(ledger)

    def exchange(
        self,
        template_id: str,
        bindings: dict[str, str],
        decoding: DecodingParams = GENERATION_DECODING,
        model_id: Optional[str] = None,
    ) -> LlmExchange:
        """Render, complete, and parse. On a ParseFailure the prompt is retried
        once with an appended JSON reminder, then the failure is returned."""
        template = registry()[template_id]
        prompt = render(template_id, bindings)
        raw, attempts = self.complete(prompt, decoding, model_id, template_id)
        parsed = parse_payload(raw, template.expected_payload)
        if isinstance(parsed, ParseFailure) and template.expected_payload is not None:
            raw2, attempts2 = self.complete(
                prompt + JSON_REMINDER, decoding, model_id, template_id
            )
            attempts += attempts2
            parsed2 = parse_payload(raw2, template.expected_payload)
            if not isinstance(parsed2, ParseFailure):
                raw, parsed = raw2, parsed2
            else:
                parsed = parsed2
                raw = raw2
        exchange = LlmExchange(
            template_id=template_id,
            rendered_prompt=prompt,
            model_id=model_id or self.model_id,
            raw_completion=raw,
            parsed_payload=parsed,
            attempts=attempts,
        )
        self._log(exchange)
        return exchange

    def _log(self, exchange: LlmExchange) -> None:
        if self.log_path is None:
            return
        line = json.dumps(exchange.to_json_dict(), ensure_ascii=False, sort_keys=True)
        with self._log_lock:
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
