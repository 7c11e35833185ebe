import math

import numpy as np
import pytest

from crossqa.embedclient import (
    DeterministicEmbedder,
    EmbeddingError,
    HttpEmbeddingClient,
    RecordedEmbeddings,
    cosine,
)


def test_cosine_is_dot_product():
    assert math.isclose(cosine((1.0, 0.0), (0.6, 0.8)), 0.6)
    assert math.isclose(cosine((0.0, 1.0), (0.0, -1.0)), -1.0)


class TestDeterministicEmbedder:
    def test_deterministic_and_unit_norm(self):
        embedder = DeterministicEmbedder(dim=16)
        a = embedder.embed("sentence", ["alpha", "beta"])
        b = embedder.embed("sentence", ["alpha", "beta"])
        assert a == b
        for vec in a:
            assert len(vec) == 16
            assert math.isclose(np.linalg.norm(vec), 1.0, abs_tol=1e-9)

    def test_kind_changes_vector(self):
        embedder = DeterministicEmbedder()
        (s,) = embedder.embed("sentence", ["alpha"])
        (c,) = embedder.embed("clip-text", ["alpha"])
        assert s != c

    def test_distinct_inputs_nearly_orthogonal(self):
        embedder = DeterministicEmbedder(dim=64)
        vecs = embedder.embed("sentence", [f"text {i}" for i in range(20)])
        for i in range(20):
            for j in range(i + 1, 20):
                assert abs(cosine(vecs[i], vecs[j])) < 0.6


class TestRecordedEmbeddings:
    def test_replay_and_missing(self):
        store = {"sentence": {"alpha": [1.0, 0.0]}}
        recorded = RecordedEmbeddings(store=store)
        assert recorded.embed("sentence", ["alpha"]) == [[1.0, 0.0]]
        with pytest.raises(EmbeddingError, match="no recorded embedding"):
            recorded.embed("sentence", ["beta"])

    def test_fallback_records_misses(self, tmp_path):
        fallback = DeterministicEmbedder(dim=4)
        recorded = RecordedEmbeddings(fallback=fallback)
        first = recorded.embed("sentence", ["alpha"])
        assert recorded.store["sentence"]["alpha"] == first[0]

        path = tmp_path / "embeds.json"
        recorded.save(path)
        reloaded = RecordedEmbeddings.load(path)  # no fallback needed now
        assert reloaded.embed("sentence", ["alpha"]) == first


class TestHttpClient:
    class FakeResponse:
        def __init__(self, status_code, payload):
            self.status_code = status_code
            self._payload = payload
            self.text = str(payload)

        def json(self):
            return self._payload

    def test_request_shape_and_response(self, monkeypatch):
        calls = {}

        def fake_post(url, json=None, headers=None, timeout=None):
            calls.update(url=url, body=json, headers=headers)
            return self.FakeResponse(200, {"vectors": [[1.0, 0.0]]})

        monkeypatch.setattr("requests.post", fake_post)
        client = HttpEmbeddingClient("http://svc:8000/", api_token="tok")
        vectors = client.embed("clip-text", ["hello"])
        assert vectors == [[1.0, 0.0]]
        assert calls["url"] == "http://svc:8000/v1/embed"
        assert calls["body"] == {"kind": "clip-text", "inputs": ["hello"]}
        assert calls["headers"]["X-Embed-Token"] == "tok"

    def test_http_error_raises(self, monkeypatch):
        monkeypatch.setattr(
            "requests.post",
            lambda *a, **k: self.FakeResponse(500, {"error": "boom"}),
        )
        with pytest.raises(EmbeddingError, match="HTTP 500"):
            HttpEmbeddingClient("http://svc").embed("sentence", ["x"])

    def test_count_mismatch_rejected(self, monkeypatch):
        monkeypatch.setattr(
            "requests.post",
            lambda *a, **k: self.FakeResponse(200, {"vectors": []}),
        )
        with pytest.raises(EmbeddingError, match="malformed"):
            HttpEmbeddingClient("http://svc").embed("sentence", ["x"])
