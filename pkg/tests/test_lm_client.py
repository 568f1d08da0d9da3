import json

import numpy as np
import pytest

from reportex.corpus import Task, default_corpus_spec, generate_synthetic_corpus
from reportex.lm_client import (
    GenerationRequest,
    TransportError,
    embed,
    generate,
    resolve_endpoint,
)
from reportex.mock_server import (
    MockLmServer,
    MockMode,
    MockModel,
    load_garbage_fixtures,
    load_malformed_templates,
)
from reportex.sweep import record_seed


@pytest.fixture(scope="module")
def corpus():
    spec = default_corpus_spec(Task.RADIOLOGY, 40, seed=21)
    return generate_synthetic_corpus(spec)


@pytest.fixture(scope="module")
def oracle_server(corpus):
    reports, annotations = corpus
    gold = {a.report_id: a.label for a in annotations}
    from reportex.corpus import RADIOLOGY_SCHEMA
    model = MockModel(MockMode.ORACLE, gold, RADIOLOGY_SCHEMA, reports)
    with MockLmServer(model) as server:
        yield server, reports, gold


class TestGenerationRequest:
    def test_payload_roundtrip(self):
        req = GenerationRequest("m", "p", json_mode=True, temperature=0.5, top_k=10,
                                top_p=0.5, seed=99)
        assert GenerationRequest.from_payload(req.to_payload()) == req

    def test_payload_roundtrip_defaults(self):
        req = GenerationRequest("m", "p")
        payload = req.to_payload()
        assert "format" not in payload
        assert payload["stream"] is False
        assert GenerationRequest.from_payload(payload) == req

    def test_validation(self):
        with pytest.raises(ValueError):
            GenerationRequest("m", "p", temperature=-1)
        with pytest.raises(ValueError):
            GenerationRequest("m", "p", top_k=0)
        with pytest.raises(ValueError):
            GenerationRequest("m", "p", top_p=0.0)


class TestGenerateWire:
    def test_oracle_answers_gold_label(self, oracle_server):
        server, reports, gold = oracle_server
        report = reports[0]
        resp = generate(server.endpoint, GenerationRequest("m1", f"Extract: {report.text}"))
        assert json.loads(resp.raw_text) == {"score": gold[report.id]}
        assert resp.model_echo == "m1"
        assert resp.latency_ms >= 0

    def test_json_mode_parseable(self, oracle_server):
        server, reports, gold = oracle_server
        resp = generate(server.endpoint,
                        GenerationRequest("m1", reports[1].text, json_mode=True))
        assert isinstance(json.loads(resp.raw_text), dict)

    def test_unknown_prompt_gets_garbage(self, oracle_server):
        server, _, _ = oracle_server
        resp = generate(server.endpoint, GenerationRequest("m1", "completely unknown text"))
        assert resp.raw_text in load_garbage_fixtures()

    def test_server_down_transport_error_after_retries(self):
        with pytest.raises(TransportError):
            generate("http://127.0.0.1:9", GenerationRequest("m", "p"),
                     retries=3, retry_base=0.001)

    def test_env_var_overrides_endpoint(self, oracle_server, monkeypatch):
        server, reports, gold = oracle_server
        monkeypatch.setenv("EXTRACTOR_LM_ENDPOINT", server.endpoint)
        resp = generate("http://127.0.0.1:9", GenerationRequest("m", reports[0].text))
        assert json.loads(resp.raw_text)["score"] == gold[reports[0].id]
        assert resolve_endpoint(None) == server.endpoint


class TestEmbedWire:
    def test_identical_texts_identical_vectors(self, oracle_server):
        server, _, _ = oracle_server
        vectors = embed(server.endpoint, "gte-large", ["idh detected", "idh detected"])
        assert np.array_equal(vectors[0], vectors[1])
        assert vectors.shape == (2, 64)

    def test_normalized(self, oracle_server):
        server, _, _ = oracle_server
        vectors = embed(server.endpoint, "gte-large", ["some words here"])
        assert np.linalg.norm(vectors[0]) == pytest.approx(1.0, abs=1e-9)

    def test_cosine_ordering(self, oracle_server):
        server, _, _ = oracle_server
        base, close, far = embed(server.endpoint, "gte-large", [
            "idh mutation detected",
            "idh mutation detected positive",
            "the weather is nice",
        ])
        assert base @ close > base @ far

    def test_empty_texts_rejected(self, oracle_server):
        server, _, _ = oracle_server
        with pytest.raises(ValueError):
            embed(server.endpoint, "gte-large", [])


class TestMockModes:
    def _model(self, mode, corpus, **kw):
        from reportex.corpus import RADIOLOGY_SCHEMA
        reports, annotations = corpus
        gold = {a.report_id: a.label for a in annotations}
        return MockModel(mode, gold, RADIOLOGY_SCHEMA, reports, **kw), reports, gold

    def test_oracle_contract(self, corpus):
        model, reports, gold = self._model(MockMode.ORACLE, corpus)
        for report in reports[:10]:
            out = model.complete({"model": "m", "prompt": f"prefix {report.text} suffix"})
            assert json.loads(out["response"]) == {"score": gold[report.id]}

    def test_noisy_oracle_rate(self, corpus):
        model, reports, gold = self._model(MockMode.NOISY_ORACLE, corpus, seed=5, noise_rate=0.1)
        report = reports[0]
        wrong = 0
        n = 10_000
        for i in range(n):
            out = model.complete({
                "model": "m",
                "prompt": report.text,
                "options": {"seed": record_seed(i, report.id)},
            })
            answer = json.loads(out["response"])["score"]
            wrong += answer != gold[report.id]
        assert abs(wrong / n - 0.1) <= 0.01

    def test_noisy_oracle_deterministic_given_seed(self, corpus):
        model, reports, _ = self._model(MockMode.NOISY_ORACLE, corpus, seed=5, noise_rate=0.5)
        payload = {"model": "m", "prompt": reports[0].text, "options": {"seed": 7}}
        assert model.complete(payload) == model.complete(payload)

    def test_garbage_mode(self, corpus):
        model, reports, _ = self._model(MockMode.GARBAGE, corpus)
        out = model.complete({"model": "m", "prompt": reports[0].text})
        assert out["response"] in load_garbage_fixtures()
        with pytest.raises(json.JSONDecodeError):
            json.loads(out["response"])

    def test_malformed_mode_draws_from_fixture_list(self, corpus):
        model, reports, gold = self._model(MockMode.MALFORMED, corpus)
        templates = load_malformed_templates()
        for report in reports[:10]:
            out = model.complete({"model": "m", "prompt": report.text})
            rendered = [t.format(key="score", label=gold[report.id]) for t in templates]
            assert out["response"] in rendered

    def test_length_noisy_error_grows_with_prompt(self, corpus):
        model, reports, gold = self._model(
            MockMode.LENGTH_NOISY, corpus, seed=3, noise_base=0.0, noise_per_kchar=0.3)
        report = reports[0]
        # full-text prompt vs an artificially padded long prompt
        long_prompt = report.text + " filler" * 2000
        n = 400
        wrong_short = wrong_long = 0
        for i in range(n):
            for prompt, bucket in ((report.text, "short"), (long_prompt, "long")):
                out = model.complete({"model": "m", "prompt": prompt,
                                      "options": {"seed": i}})
                wrong = json.loads(out["response"])["score"] != gold[report.id]
                if bucket == "short":
                    wrong_short += wrong
                else:
                    wrong_long += wrong
        assert wrong_long > wrong_short
