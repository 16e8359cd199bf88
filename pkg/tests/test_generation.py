import json
import math
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kgrag import generation
from kgrag.errors import ConfigError, ContractError, DecodeError, StatusError, TransportError
from kgrag.generation import ABSTAIN_TEXT, HTTP, GenerationRequest, GeneratorConfig
from kgrag.kg_store import KnowledgeGraph, load_desk_kg
from kgrag.retrieval import EvidenceBundle, format_context

from conftest import WORKED_QUESTION, WORKED_TRIPLE


def bundle(triples, store):
    return EvidenceBundle([(t, -float(i)) for i, t in enumerate(triples)], np.array([0.5, -0.5]), format_context(triples, store))


# -- attention --------------------------------------------------------------

def test_attention_equal_keys_average_values():
    Q = np.array([[1.0, 2.0]])
    K = np.array([[0.3, 0.3], [0.3, 0.3]])
    V = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert np.allclose(generation.scaled_dot_product_attention(Q, K, V), [[0.5, 0.5]])


def test_attention_hand_case():
    # scores = [0, 2] / sqrt(1) -> weights e^0/(1+e^2), e^2/(1+e^2)
    w = generation.attention_weights([[1.0]], [[0.0], [2.0]])
    assert w[0, 1] == pytest.approx(math.exp(2) / (1 + math.exp(2)), abs=1e-12)
    out = generation.scaled_dot_product_attention([[1.0]], [[0.0], [2.0]], [[10.0], [20.0]])
    assert out[0, 0] == pytest.approx(10 + 10 * w[0, 1])


def test_attention_large_scores_stable():
    w = generation.attention_weights([[1000.0, 1000.0]], [[1.0, 1.0], [-1.0, -1.0]])
    assert np.isfinite(w).all() and w[0, 0] == pytest.approx(1.0)


def test_attention_contract():
    with pytest.raises(ContractError):
        generation.attention_weights(np.ones((2, 3)), np.ones((2, 4)))
    with pytest.raises(ContractError):
        generation.scaled_dot_product_attention(np.ones((1, 2)), np.ones((3, 2)), np.ones((2, 2)))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 7), st.integers(1, 5), st.integers(1, 4), st.integers(0, 2**31))
def test_attention_invariants(n, m, dk, dv, seed):
    rng = np.random.default_rng(seed)
    Q, K, V = rng.normal(size=(n, dk)) * 3, rng.normal(size=(m, dk)) * 3, rng.normal(size=(m, dv))
    W = generation.attention_weights(Q, K)
    assert np.all(W >= 0) and np.allclose(W.sum(axis=1), 1.0, atol=1e-6)
    out = generation.scaled_dot_product_attention(Q, K, V)
    assert np.all(out >= V.min(axis=0) - 1e-9) and np.all(out <= V.max(axis=0) + 1e-9)
    perm = rng.permutation(m)
    assert np.allclose(generation.scaled_dot_product_attention(Q, K[perm], V[perm]), out, atol=1e-9)


# -- sequence likelihood ----------------------------------------------------

def test_log_prob_uniform():
    uniform = lambda prefix: {c: 0.25 for c in "abcd"}  # noqa: E731
    assert generation.sequence_log_prob("abc", uniform) == pytest.approx(-3 * math.log(4))


def test_log_prob_markov_hand_case():
    table = {(): {"a": 0.6, "b": 0.4}, "a": {"a": 0.1, "b": 0.9}, "b": {"a": 0.5, "b": 0.5}}
    model = lambda prefix: table[prefix[-1] if prefix else ()]  # noqa: E731
    assert generation.sequence_log_prob("ab", model) == pytest.approx(math.log(0.6) + math.log(0.9))
    assert generation.sequence_log_prob("bba", model) == pytest.approx(math.log(0.4 * 0.5 * 0.5))


def test_log_prob_edge_cases():
    model = lambda prefix: {"a": 1.0, "b": 0.0}  # noqa: E731
    assert generation.sequence_log_prob("ab", model) == -math.inf
    assert generation.sequence_log_prob("aaa", model) == 0.0
    with pytest.raises(ContractError):
        generation.sequence_log_prob("a", lambda p: {"a": 0.7})
    with pytest.raises(ContractError):
        generation.sequence_log_prob("", model)


# -- template backend -------------------------------------------------------

def test_intents():
    assert generation.question_intents(WORKED_QUESTION) == ["prevent"]
    assert generation.question_intents("What are the symptoms and cures?") == ["treat", "symptom"]
    assert generation.question_intents("Where does it grow?") == []


def test_template_worked_question(desk_kg):
    disease = desk_kg.entity_id("tobacco mosaic disease")
    evidence = [t for t in desk_kg.triples if disease in (t.head, t.tail)]
    req = GenerationRequest(WORKED_QUESTION, bundle(evidence, desk_kg))
    ans = generation.template_answer(req, desk_kg)
    labels = [desk_kg.entity_label(e) for e in ans.answer_entities]
    assert "spraying antiviral agents" in labels
    assert all("prevent" in desk_kg.relation_label(t.relation) for t in ans.supporting_triples)
    assert "spraying antiviral agents" in ans.text and not ans.abstained


def test_template_falls_back_to_all_evidence(desk_kg):
    only = [desk_kg.encode(*WORKED_TRIPLE)]
    ans = generation.template_answer(GenerationRequest(WORKED_QUESTION, bundle(only, desk_kg)), desk_kg)
    assert [desk_kg.entity_label(e) for e in ans.answer_entities] == ["spraying antiviral agents"]
    assert ans.supporting_triples == only


def test_template_abstains_without_evidence(desk_kg):
    ans = generation.template_answer(GenerationRequest(WORKED_QUESTION, bundle([], desk_kg)), desk_kg)
    assert ans.text == ABSTAIN_TEXT and ans.abstained and ans.supporting_triples == []


def test_template_treatment_vs_habitat():
    kg = KnowledgeGraph.from_triples([("blight", "treated by", "copper spray"), ("blight", "found in", "humid fields")])
    req = GenerationRequest("How is blight treated?", bundle(list(kg.triples), kg))
    ans = generation.template_answer(req, kg)
    assert [kg.entity_label(e) for e in ans.answer_entities] == ["copper spray"]


def test_template_caps_answer_entities(desk_kg):
    req = GenerationRequest("what?", bundle(list(desk_kg.triples), desk_kg), max_answer_entities=2)
    ans = generation.template_answer(req, desk_kg)
    assert len(ans.answer_entities) == 2
    assert {t.tail for t in ans.supporting_triples} == set(ans.answer_entities)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 19), max_size=12, unique=True), st.sampled_from([WORKED_QUESTION, "What treats it?", "Symptoms?", "Tell me"]))
def test_template_grounded(idx, question):
    kg = load_desk_kg()
    evidence = [kg.triples[i] for i in idx]
    ans = generation.template_answer(GenerationRequest(question, bundle(evidence, kg)), kg)
    assert set(ans.supporting_triples) <= set(evidence)
    assert set(ans.answer_entities) == {t.tail for t in ans.supporting_triples}
    assert ans.abstained == (not evidence)


def test_request_contract(desk_kg):
    with pytest.raises(ContractError):
        GenerationRequest("  ", bundle([], desk_kg))
    with pytest.raises(ConfigError):
        GenerationRequest("q", bundle([], desk_kg), backend="gpt")


# -- http backend -----------------------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    mode = "echo"
    received: list = []

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        type(self).received.append((self.path, body))
        if self.mode == "500":
            self.send_response(500)
            self.end_headers()
            self.wfile.write(b"boom")
            return
        payload = {"text": "Try spraying antiviral agents."} if self.mode == "echo" else {"output": "x"}
        data = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _Handler.received = []
    yield server, f"http://127.0.0.1:{server.server_address[1]}"
    server.shutdown()
    server.server_close()


def test_http_echo(stub_server, desk_kg):
    _, url = stub_server
    _Handler.mode = "echo"
    evidence = [desk_kg.encode(*WORKED_TRIPLE)]
    req = GenerationRequest(WORKED_QUESTION, bundle(evidence, desk_kg), backend=HTTP)
    ans = generation.generate_answer(req, desk_kg, GeneratorConfig(url, timeout=5, max_tokens=64))
    assert ans.text == "Try spraying antiviral agents."
    assert [desk_kg.entity_label(e) for e in ans.answer_entities] == ["spraying antiviral agents"]
    assert ans.supporting_triples == evidence
    path, body = _Handler.received[0]
    assert path == "/generate"
    assert body["max_tokens"] == 64 and body["fused_vector"] == [0.5, -0.5]
    assert body["prompt"].startswith("EVIDENCE:\n- tobacco mosaic disease | treated by")
    assert body["prompt"].endswith(f"QUESTION: {WORKED_QUESTION}\nANSWER:")


def test_http_status_error(stub_server):
    _, url = stub_server
    _Handler.mode = "500"
    with pytest.raises(StatusError) as info:
        generation.call_generator_endpoint("p", GeneratorConfig(url, timeout=5))
    assert info.value.status_code == 500


def test_http_decode_error(stub_server):
    _, url = stub_server
    _Handler.mode = "missing"
    with pytest.raises(DecodeError):
        generation.call_generator_endpoint("p", GeneratorConfig(url, timeout=5))


def test_http_transport_error():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    port = server.server_address[1]
    server.server_close()
    with pytest.raises(TransportError):
        generation.call_generator_endpoint("p", GeneratorConfig(f"http://127.0.0.1:{port}", timeout=2))


def test_http_requires_url(monkeypatch):
    monkeypatch.delenv("GENERATOR_URL", raising=False)
    assert GeneratorConfig.from_env().url is None
    with pytest.raises(ConfigError):
        generation.call_generator_endpoint("p", GeneratorConfig.from_env())
    monkeypatch.setenv("GENERATOR_URL", "http://example.invalid")
    assert GeneratorConfig.from_env(timeout=3).url == "http://example.invalid"
