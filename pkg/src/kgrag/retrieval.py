"""Entity linking, hop-limited subgraph extraction, evidence ranking and context fusion."""

from __future__ import annotations

import re
import weakref
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ContractError, NoEntityError
from .gcn import NodeRepresentations
from .kg_store import OUTGOING, KnowledgeGraph, Triple
from .transe import L2, EmbeddingTable, score_triple

DEFAULT_HOP_LIMIT = 2
DEFAULT_BUDGET = 64
DEFAULT_TOP_K = 12
DEFAULT_ALPHA = 1.0
DEFAULT_BETA = 0.1
CONTEXT_HEADER = "EVIDENCE:"

_TOKEN = re.compile(r"\w+(?:[-'’]\w+)*")


@dataclass(frozen=True)
class EntityMention:
    entity: int
    span: tuple[int, int]
    matched_surface: str


@dataclass
class Subgraph:
    seeds: list[int]
    triples: list[tuple[Triple, int]]
    hop_limit: int
    budget: int

    def triple_set(self) -> set[Triple]:
        return {t for t, _ in self.triples}


@dataclass
class EvidenceBundle:
    ranked_triples: list[tuple[Triple, float]]
    fused_vector: np.ndarray
    context_text: str
    mentions: list[EntityMention] = field(default_factory=list)

    @property
    def triples(self) -> list[Triple]:
        return [t for t, _ in self.ranked_triples]


def _tokens(text: str) -> list[re.Match]:
    return list(_TOKEN.finditer(text.lower()))


class _LinkIndex:
    def __init__(self, store: KnowledgeGraph):
        self.table: dict[tuple[str, ...], int] = {}
        # aliases first so that canonical labels win on collision
        for alias, idx in store.aliases.items():
            key = tuple(m.group() for m in _tokens(alias))
            if key:
                self.table[key] = idx
        for idx, label in enumerate(store.entity_labels):
            key = tuple(m.group() for m in _tokens(label))
            if key:
                self.table[key] = idx
        self.max_len = max((len(k) for k in self.table), default=0)


_INDEX_CACHE: "weakref.WeakKeyDictionary[KnowledgeGraph, tuple[tuple[int, int], _LinkIndex]]" = weakref.WeakKeyDictionary()


def _link_index(store: KnowledgeGraph) -> _LinkIndex:
    signature = (store.num_entities, len(store.aliases))
    cached = _INDEX_CACHE.get(store)
    if cached is None or cached[0] != signature:
        cached = (signature, _LinkIndex(store))
        _INDEX_CACHE[store] = cached
    return cached[1]


def link_entities(question: str, store: KnowledgeGraph) -> list[EntityMention]:
    """Longest-match-first, left-to-right scan of token n-grams against labels and aliases."""
    index = _link_index(store)
    toks = _tokens(question)
    words = [m.group() for m in toks]
    mentions = []
    i = 0
    while i < len(words):
        for n in range(min(index.max_len, len(words) - i), 0, -1):
            idx = index.table.get(tuple(words[i:i + n]))
            if idx is not None:
                start, end = toks[i].start(), toks[i + n - 1].end()
                mentions.append(EntityMention(idx, (start, end), question[start:end]))
                i += n
                break
        else:
            i += 1
    return mentions


def mention_seeds(mentions: Sequence[EntityMention]) -> list[int]:
    return list(dict.fromkeys(m.entity for m in mentions))


def extract_subgraph(
    seeds: Sequence[int],
    store: KnowledgeGraph,
    hop_limit: int = DEFAULT_HOP_LIMIT,
    budget: int = DEFAULT_BUDGET,
) -> Subgraph:
    """Breadth-first expansion over both edge directions from all seeds at once.

    A triple gets hop = 1 + distance of its nearer endpoint; triples come out in
    hop order and the list is cut at ``budget``.
    """
    seeds = list(dict.fromkeys(int(s) for s in seeds))
    if not seeds:
        raise ContractError("extract_subgraph needs at least one seed")
    if hop_limit < 1:
        raise ContractError("hop_limit must be >= 1")
    if budget < 0:
        raise ContractError("budget must be >= 0")
    for s in seeds:
        store.entity_label(s)
    dist = {s: 0 for s in seeds}
    queue = deque(seeds)
    seen: set[Triple] = set()
    collected: list[tuple[Triple, int]] = []
    while queue and len(collected) < budget:
        e = queue.popleft()
        d = dist[e]
        if d >= hop_limit:
            break
        for n in store.neighbors(e):
            triple = Triple(e, n.relation, n.entity) if n.direction == OUTGOING else Triple(n.entity, n.relation, e)
            if triple not in seen:
                seen.add(triple)
                collected.append((triple, d + 1))
                if len(collected) >= budget:
                    break
            if n.entity not in dist:
                dist[n.entity] = d + 1
                queue.append(n.entity)
    return Subgraph(seeds, collected, hop_limit, budget)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b) / (na * nb)


def _label_key(store: KnowledgeGraph, triple: Triple) -> tuple[str, str, str]:
    return store.decode(triple)


def sort_evidence(scored: Sequence[tuple[Triple, float]], store: KnowledgeGraph) -> list[tuple[Triple, float]]:
    """Score descending, ties by (head, relation, tail) labels."""
    return sorted(scored, key=lambda x: (-x[1], _label_key(store, x[0])))


def rank_evidence(
    sub: Subgraph,
    mentions: Sequence[EntityMention],
    table: EmbeddingTable,
    refined: NodeRepresentations,
    store: KnowledgeGraph,
    norm: str = L2,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
) -> list[tuple[Triple, float]]:
    """score = -alpha*hop - beta*TransE distance + cos(query, refined tail).

    The query vector is the mean refined representation of the linked
    entities (the subgraph seeds when no mentions are given).
    """
    if not sub.triples:
        return []
    focus = mention_seeds(mentions) or sub.seeds
    query = refined.matrix[focus].mean(axis=0)
    scored = []
    for triple, hop in sub.triples:
        s = -alpha * hop - beta * score_triple(*triple, table, norm) + _cosine(query, refined.matrix[triple.tail])
        scored.append((triple, s))
    return sort_evidence(scored, store)


def flat_evidence(sub: Subgraph) -> list[tuple[Triple, float]]:
    """Unranked evidence: subgraph order, encoded as strictly decreasing scores."""
    return [(triple, -float(i)) for i, (triple, _) in enumerate(sub.triples)]


def fuse_representations(e_d: Sequence[float], g_d: Sequence[float]) -> np.ndarray:
    """Concatenate the raw entity vector with its graph-refined counterpart."""
    e = np.asarray(e_d, dtype=float).ravel()
    g = np.asarray(g_d, dtype=float).ravel()
    if e.size == 0 and g.size == 0:
        raise ContractError("both inputs to fusion are empty")
    if not (np.isfinite(e).all() and np.isfinite(g).all()):
        raise ContractError("fusion inputs must be finite")
    return np.concatenate([e, g])


def format_context(triples: Sequence[Triple], store: KnowledgeGraph) -> str:
    lines = [CONTEXT_HEADER]
    for triple in triples:
        h, r, t = store.decode(triple)
        lines.append(f"- {h} | {r} | {t}")
    return "\n".join(lines)


def build_evidence_context(
    ranked: Sequence[tuple[Triple, float]],
    mentions: Sequence[EntityMention],
    table: EmbeddingTable,
    refined: NodeRepresentations,
    store: KnowledgeGraph,
    top_k: int = DEFAULT_TOP_K,
) -> EvidenceBundle:
    if top_k < 0:
        raise ContractError("top_k must be >= 0")
    entities = mention_seeds(mentions)
    if not entities:
        raise NoEntityError("no linked entity to anchor the evidence")
    kept = list(ranked[:top_k])
    e_d = table.entity_vectors[entities].mean(axis=0)
    g_d = refined.matrix[entities].mean(axis=0)
    return EvidenceBundle(
        ranked_triples=kept,
        fused_vector=fuse_representations(e_d, g_d),
        context_text=format_context([t for t, _ in kept], store),
        mentions=list(mentions),
    )


def retrieve(
    question: str,
    store: KnowledgeGraph,
    table: EmbeddingTable,
    refined: NodeRepresentations,
    norm: str = L2,
    hop_limit: int = DEFAULT_HOP_LIMIT,
    budget: int = DEFAULT_BUDGET,
    top_k: int = DEFAULT_TOP_K,
    alpha: float = DEFAULT_ALPHA,
    beta: float = DEFAULT_BETA,
) -> EvidenceBundle:
    """Link, extract, rank and serialise in one call."""
    mentions = link_entities(question, store)
    if not mentions:
        raise NoEntityError(f"no knowledge-graph entity found in {question!r}")
    sub = extract_subgraph(mention_seeds(mentions), store, hop_limit, budget)
    ranked = rank_evidence(sub, mentions, table, refined, store, norm, alpha, beta)
    return build_evidence_context(ranked, mentions, table, refined, store, top_k)
