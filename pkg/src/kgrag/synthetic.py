"""Seeded synthetic graphs and QA sets for experiments and regression tests."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .kg_store import KnowledgeGraph

LabelTriple = tuple[str, str, str]

# (name, row step, column step); later moves are sums of earlier ones
GRID_MOVES = (
    ("east of", 0, 1),
    ("south of", 1, 0),
    ("two east of", 0, 2),
    ("southeast of", 1, 1),
    ("two south of", 2, 0),
)


def chain_graph(num_entities: int = 50, relation: str = "next") -> list[LabelTriple]:
    return [(f"node {i}", relation, f"node {i + 1}") for i in range(num_entities - 1)]


def grid_labels(rows: int = 5, cols: int = 10) -> list[str]:
    return [f"cell {r} {c}" for r in range(rows) for c in range(cols)]


def grid_graph(rows: int = 5, cols: int = 10) -> list[LabelTriple]:
    """Entities on a rows x cols lattice; each relation is a fixed lattice displacement.

    Relations compose (``southeast of`` = ``east of`` + ``south of``), so the
    whole graph is exactly representable by translations.
    """
    triples = []
    for name, dr, dc in GRID_MOVES:
        for r in range(rows - dr):
            for c in range(cols - dc):
                triples.append((f"cell {r} {c}", name, f"cell {r + dr} {c + dc}"))
    return triples


def split_holdout(triples: list[LabelTriple], fraction: float, seed: int) -> tuple[list[LabelTriple], list[LabelTriple]]:
    """Hold out ``fraction`` of triples while every entity keeps a training triple."""
    rng = np.random.default_rng(seed)
    degree = Counter()
    for h, _, t in triples:
        degree[h] += 1
        degree[t] += 1
    target = int(round(fraction * len(triples)))
    held: set[int] = set()
    for i in rng.permutation(len(triples)):
        if len(held) >= target:
            break
        h, _, t = triples[i]
        if degree[h] > 1 and degree[t] > 1:
            held.add(int(i))
            degree[h] -= 1
            degree[t] -= 1
    train = [x for i, x in enumerate(triples) if i not in held]
    test = [x for i, x in enumerate(triples) if i in held]
    return train, test


@dataclass
class LinkPredictionSplit:
    store: KnowledgeGraph
    train: list[LabelTriple]
    test: list[LabelTriple]


def grid_link_prediction(seed: int = 7, fraction: float = 0.1) -> LinkPredictionSplit:
    """50 entities, 5 relations, 191 compositional triples; ``fraction`` held out."""
    triples = grid_graph()
    train, test = split_holdout(triples, fraction, seed)
    store = KnowledgeGraph.from_triples(train, entities=grid_labels(), relations=[m[0] for m in GRID_MOVES])
    return LinkPredictionSplit(store, train, test)


# -- QA benchmark ----------------------------------------------------------

TREATED_BY = "treated by"
PREVENTED_BY = "prevented by"
HAS_SYMPTOM = "has symptom"


@dataclass
class QaBenchmark:
    triples: list[LabelTriple]
    examples: list[dict]

    def store(self) -> KnowledgeGraph:
        return KnowledgeGraph.from_triples(self.triples)


def qa_benchmark(
    seed: int = 11,
    num_diseases: int = 30,
    symptoms_per_disease: int = 2,
    num_treatments: int = 40,
    treatments_per_disease: int = 2,
    num_preventions: int = 20,
    num_questions: int = 200,
) -> QaBenchmark:
    """A disease/symptom/treatment graph plus direct, multi-hop and comparative questions.

    With the defaults the graph has 150 entities. Symptoms belong to exactly
    one disease; treatments and prevention measures are shared, so flat
    neighbourhoods contain distractors from other diseases.
    """
    rng = np.random.default_rng(seed)
    diseases = [f"disease {i:02d}" for i in range(num_diseases)]
    treatments = [f"agent {i:02d}" for i in range(num_treatments)]
    preventions = [f"measure {i:02d}" for i in range(num_preventions)]
    triples: list[LabelTriple] = []
    treats: dict[str, list[str]] = {}
    prevents: dict[str, list[str]] = {}
    symptoms: dict[str, list[str]] = {}
    s_index = 0
    for i, d in enumerate(diseases):
        # every treatment / measure is used at least once
        fixed = [treatments[i % num_treatments]]
        if num_diseases + i < num_treatments:
            fixed.append(treatments[num_diseases + i])
        fixed = fixed[:treatments_per_disease]
        others_t = [t for t in treatments if t not in fixed]
        extra = rng.choice(len(others_t), treatments_per_disease - len(fixed), replace=False)
        chosen_t = fixed + [others_t[j] for j in extra]
        chosen_p = [preventions[i % num_preventions]]
        chosen_s = []
        for _ in range(symptoms_per_disease):
            chosen_s.append(f"lesion pattern {s_index:02d}")
            s_index += 1
        treats[d], prevents[d], symptoms[d] = sorted(chosen_t), chosen_p, chosen_s
        triples += [(d, HAS_SYMPTOM, s) for s in chosen_s]
        triples += [(d, TREATED_BY, t) for t in treats[d]]
        triples += [(d, PREVENTED_BY, p) for p in chosen_p]

    examples = []
    kinds = ["direct", "multihop", "comparative"]
    weights = np.array([0.4, 0.35, 0.25])
    for q in range(num_questions):
        kind = kinds[int(rng.choice(3, p=weights))]
        d = diseases[int(rng.integers(num_diseases))]
        if kind == "direct":
            intent = int(rng.integers(3))
            if intent == 0:
                question, gold = f"How to treat {d}?", treats[d]
            elif intent == 1:
                question, gold = f"How to prevent {d}?", prevents[d]
            else:
                question, gold = f"What are the symptoms of {d}?", symptoms[d]
        elif kind == "multihop":
            s = symptoms[d][int(rng.integers(symptoms_per_disease))]
            if rng.random() < 0.5:
                question, gold = f"How to treat the disease that causes {s}?", treats[d]
            else:
                question, gold = f"How to prevent the disease that causes {s}?", prevents[d]
        else:
            other = diseases[int(rng.integers(num_diseases))]
            while other == d:
                other = diseases[int(rng.integers(num_diseases))]
            question = f"Compare how to treat {d} and {other}."
            gold = sorted(set(treats[d]) | set(treats[other]))
        examples.append({"id": f"q{q:03d}", "question": question, "type": kind, "gold": list(gold)})
    return QaBenchmark(triples, examples)
