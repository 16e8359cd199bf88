"""Answer generation backends plus reference attention / likelihood operators.

The template backend answers deterministically from evidence triples; the
http backend posts the prompt to ``$GENERATOR_URL/generate``.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import httpx
import numpy as np

from .errors import ConfigError, ContractError, DecodeError, StatusError, TransportError
from .kg_store import KnowledgeGraph, Triple
from .retrieval import EvidenceBundle, link_entities

TEMPLATE = "template"
HTTP = "http"
ABSTAIN_TEXT = "no supported answer"

# question keyword stem -> substring a relation label must contain
INTENT_PATTERNS = (
    (re.compile(r"\bprevent(?:ion|ions|s|ed|ing)?\b"), "prevent"),
    (re.compile(r"\b(?:treat\w*|cure[sd]?|curing|control\w*)\b"), "treat"),
    (re.compile(r"\b(?:symptom\w*|signs?)\b"), "symptom"),
)


# -- reference operators ---------------------------------------------------

def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def attention_weights(Q: np.ndarray, K: np.ndarray) -> np.ndarray:
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if Q.shape[1] != K.shape[1]:
        raise ContractError(f"query dim {Q.shape[1]} != key dim {K.shape[1]}")
    if Q.shape[1] < 1 or K.shape[0] < 1:
        raise ContractError("attention needs d_k >= 1 and at least one key")
    return softmax(Q @ K.T / math.sqrt(Q.shape[1]), axis=1)


def scaled_dot_product_attention(Q: np.ndarray, K: np.ndarray, V: np.ndarray) -> np.ndarray:
    """softmax(Q K^T / sqrt(d_k)) V with a max-shifted softmax."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape[0] != V.shape[0]:
        raise ContractError(f"{K.shape[0]} keys but {V.shape[0]} values")
    return attention_weights(Q, K) @ V


def sequence_log_prob(tokens: Sequence, next_token_model: Callable[[tuple], Mapping], tol: float = 1e-6) -> float:
    """Sum of log p(x_i | x_<i) under an autoregressive model.

    ``next_token_model(prefix)`` must return a mapping token -> probability
    that sums to one.
    """
    if len(tokens) == 0:
        raise ContractError("empty token sequence")
    total = 0.0
    for i, tok in enumerate(tokens):
        dist = next_token_model(tuple(tokens[:i]))
        mass = math.fsum(dist.values())
        if abs(mass - 1.0) > tol:
            raise ContractError(f"model distribution at position {i} sums to {mass}")
        p = dist.get(tok, 0.0)
        if p <= 0.0:
            return -math.inf
        total += math.log(p)
    return total


# -- backends ---------------------------------------------------------------

@dataclass
class GeneratorConfig:
    url: str | None = None
    timeout: float = 30.0
    max_tokens: int = 256

    @classmethod
    def from_env(cls, timeout: float = 30.0, max_tokens: int = 256) -> "GeneratorConfig":
        return cls(os.environ.get("GENERATOR_URL"), timeout, max_tokens)


@dataclass
class GenerationRequest:
    question: str
    evidence: EvidenceBundle
    max_answer_entities: int = 10
    backend: str = TEMPLATE

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise ContractError("question must be non-empty")
        if self.backend not in (TEMPLATE, HTTP):
            raise ConfigError(f"unknown backend {self.backend!r}")


@dataclass
class Answer:
    text: str
    answer_entities: list[int] = field(default_factory=list)
    supporting_triples: list[Triple] = field(default_factory=list)

    @property
    def abstained(self) -> bool:
        return not self.answer_entities


def question_intents(question: str) -> list[str]:
    q = question.lower()
    return [target for pattern, target in INTENT_PATTERNS if pattern.search(q)]


def select_supporting(question: str, evidence: Sequence[Triple], store: KnowledgeGraph) -> list[Triple]:
    """Evidence triples whose relation matches the question intent.

    Falls back to all evidence when the question has no intent keyword or when
    no evidence relation matches it.
    """
    intents = question_intents(question)
    if not intents:
        return list(evidence)
    matched = [t for t in evidence if any(k in store.relation_label(t.relation) for k in intents)]
    return matched or list(evidence)


def template_answer(req: GenerationRequest, store: KnowledgeGraph) -> Answer:
    support = select_supporting(req.question, req.evidence.triples, store)
    if not support:
        return Answer(ABSTAIN_TEXT)
    entities = list(dict.fromkeys(t.tail for t in support))[: req.max_answer_entities]
    kept = [t for t in support if t.tail in entities]
    text = "Based on the retrieved evidence: " + "; ".join(store.entity_label(e) for e in entities) + "."
    return Answer(text, entities, kept)


def build_prompt(question: str, evidence: EvidenceBundle) -> str:
    return f"{evidence.context_text}\n\nQUESTION: {question}\nANSWER:"


def call_generator_endpoint(
    prompt: str,
    config: GeneratorConfig,
    evidence: str = "",
    fused_vector: Sequence[float] = (),
    client: httpx.Client | None = None,
) -> str:
    """POST the prompt to ``<url>/generate`` and return the ``text`` field."""
    if not config.url:
        raise ConfigError("generator URL not configured (set GENERATOR_URL)")
    payload = {
        "prompt": prompt,
        "evidence": evidence,
        "fused_vector": [float(x) for x in fused_vector],
        "max_tokens": int(config.max_tokens),
    }
    url = config.url.rstrip("/") + "/generate"
    try:
        if client is None:
            resp = httpx.post(url, json=payload, timeout=config.timeout)
        else:
            resp = client.post(url, json=payload, timeout=config.timeout)
    except httpx.HTTPError as exc:
        raise TransportError(f"request to {url} failed: {exc}") from exc
    if not resp.is_success:
        raise StatusError(resp.status_code, resp.text)
    try:
        body = resp.json()
    except ValueError as exc:
        raise DecodeError(f"response is not JSON: {exc}") from exc
    if not isinstance(body, dict) or not isinstance(body.get("text"), str):
        raise DecodeError("response JSON lacks a string 'text' field")
    return body["text"]


def http_answer(req: GenerationRequest, store: KnowledgeGraph, config: GeneratorConfig) -> Answer:
    text = call_generator_endpoint(
        build_prompt(req.question, req.evidence),
        config,
        evidence=req.evidence.context_text,
        fused_vector=req.evidence.fused_vector,
    )
    entities = list(dict.fromkeys(m.entity for m in link_entities(text, store)))[: req.max_answer_entities]
    support = [t for t in req.evidence.triples if t.head in entities or t.tail in entities]
    return Answer(text, entities, support)


def generate_answer(req: GenerationRequest, store: KnowledgeGraph, config: GeneratorConfig | None = None) -> Answer:
    if req.backend == TEMPLATE:
        return template_answer(req, store)
    return http_answer(req, store, config or GeneratorConfig.from_env())
