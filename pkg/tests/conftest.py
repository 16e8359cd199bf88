import numpy as np
import pytest

from kgrag.kg_store import KnowledgeGraph, load_desk_kg

WORKED_TRIPLE = ("tobacco mosaic disease", "treated by", "spraying antiviral agents")
WORKED_QUESTION = "How to prevent tobacco mosaic disease?"


@pytest.fixture
def desk_kg():
    return load_desk_kg()


@pytest.fixture
def toy_kg():
    # "a" has 3 out-edges and 2 in-edges; "z" is isolated
    triples = [
        ("a", "r1", "b"),
        ("a", "r1", "c"),
        ("a", "r2", "d"),
        ("e", "r1", "a"),
        ("f", "r2", "a"),
        ("b", "r2", "c"),
    ]
    kg = KnowledgeGraph.from_triples(triples)
    kg.add_entity("z")
    return kg


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_store(rng, num_entities, num_triples, num_relations=3):
    """Random labelled store with every entity registered (possibly isolated)."""
    kg = KnowledgeGraph.from_triples(
        [],
        entities=[f"n{i}" for i in range(num_entities)],
        relations=[f"r{i}" for i in range(num_relations)],
    )
    for _ in range(num_triples):
        h, t = rng.integers(num_entities, size=2)
        r = rng.integers(num_relations)
        kg.add_triple(f"n{h}", f"r{r}", f"n{t}")
    return kg
