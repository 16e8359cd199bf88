"""TransE embeddings trained with a margin ranking loss and filtered negative sampling.

Training is plain per-pair SGD with analytic gradients; entity vectors are
projected back onto the unit L2 ball after every batch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, EvaluationError, SamplingError, TrainingError
from .kg_store import KnowledgeGraph, Triple

log = logging.getLogger(__name__)

L1 = "L1"
L2 = "L2"
GRAD_EPS = 1e-9
HEAD = "head"
TAIL = "tail"


def parse_norm(norm: str) -> str:
    value = str(norm).upper()
    if value not in (L1, L2):
        raise ConfigError(f"norm must be L1 or L2, got {norm!r}")
    return value


@dataclass
class EmbeddingTable:
    entity_vectors: np.ndarray
    relation_vectors: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.entity_vectors.shape[1])

    @property
    def num_entities(self) -> int:
        return int(self.entity_vectors.shape[0])

    @property
    def num_relations(self) -> int:
        return int(self.relation_vectors.shape[0])

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.entity_vectors.copy(), self.relation_vectors.copy())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.entity_vectors).all() and np.isfinite(self.relation_vectors).all())


@dataclass
class TrainConfig:
    margin: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 100
    norm: str = L2
    negatives_per_positive: int = 1
    seed: int = 7
    batch_size: int = 32

    def __post_init__(self) -> None:
        self.norm = parse_norm(self.norm)
        if not self.margin > 0:
            raise ConfigError("margin must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.negatives_per_positive < 1:
            raise ConfigError("negatives_per_positive must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


@dataclass(frozen=True)
class NegativeTriple:
    triple: Triple
    corrupted_slot: str


@dataclass(frozen=True)
class EpochStats:
    epoch_index: int
    mean_loss: float
    active_margin_fraction: float


@dataclass
class SparseGradient:
    """Gradient rows keyed by entity / relation id; absent ids have zero gradient."""

    entity: dict[int, np.ndarray] = field(default_factory=dict)
    relation: dict[int, np.ndarray] = field(default_factory=dict)

    def add_entity(self, idx: int, vec: np.ndarray) -> None:
        if idx in self.entity:
            self.entity[idx] = self.entity[idx] + vec
        else:
            self.entity[idx] = vec.copy()

    def add_relation(self, idx: int, vec: np.ndarray) -> None:
        if idx in self.relation:
            self.relation[idx] = self.relation[idx] + vec
        else:
            self.relation[idx] = vec.copy()

    def is_zero(self) -> bool:
        return all(not v.any() for v in self.entity.values()) and all(not v.any() for v in self.relation.values())


def init_embeddings(num_entities: int, num_relations: int, dim: int, seed: int) -> EmbeddingTable:
    """Uniform init in [-6/sqrt(dim), 6/sqrt(dim)]; relation rows are then L2-normalised."""
    if dim < 1:
        raise ConfigError("embedding dim must be >= 1")
    rng = np.random.default_rng(seed)
    bound = 6.0 / math.sqrt(dim)
    ent = rng.uniform(-bound, bound, size=(num_entities, dim))
    rel = rng.uniform(-bound, bound, size=(num_relations, dim))
    if num_relations:
        rel /= np.maximum(np.linalg.norm(rel, axis=1, keepdims=True), GRAD_EPS)
    return EmbeddingTable(ent, rel)


def distance(vec: np.ndarray, norm: str) -> float:
    if norm == L1:
        return float(np.abs(vec).sum())
    return float(math.sqrt(float(vec @ vec)))


def score_triple(h: int, r: int, t: int, table: EmbeddingTable, norm: str = L2) -> float:
    """Distance d(h + r, t); zero exactly for a perfect translation."""
    hv, rv, tv = table.entity_vectors[h], table.relation_vectors[r], table.entity_vectors[t]
    if not hv.shape == rv.shape == tv.shape:
        raise ContractError("embedding dimension mismatch")
    return distance(hv + rv - tv, parse_norm(norm))


def hinge_loss(d_pos: float, d_neg: float, margin: float) -> float:
    return max(0.0, margin + d_pos - d_neg)


def sample_negative(positive: Triple, store: KnowledgeGraph, rng: np.random.Generator) -> NegativeTriple:
    """Corrupt head or tail (p = 1/2 each), rejecting corruptions that are known facts."""
    n = store.num_entities
    if n < 2:
        raise SamplingError("need at least two entities to corrupt a triple")
    h, r, t = positive
    for _ in range(n):
        slot = HEAD if rng.random() < 0.5 else TAIL
        # draw from the n - 1 entities other than the original one
        pick = int(rng.integers(n - 1))
        if slot == HEAD:
            cand = Triple(h, r, t)._replace(head=pick + (pick >= h))
        else:
            cand = Triple(h, r, t)._replace(tail=pick + (pick >= t))
        if cand not in store:
            return NegativeTriple(cand, slot)
    raise SamplingError(f"no valid corruption found for {tuple(positive)} after {n} rejections")


def _distance_grad(diff: np.ndarray, norm: str) -> np.ndarray:
    if norm == L1:
        return np.sign(diff)
    return diff / max(float(np.sqrt(diff @ diff)), GRAD_EPS)


def loss_gradient(positive: Triple, negative: NegativeTriple, table: EmbeddingTable, config: TrainConfig) -> SparseGradient:
    """Analytic gradient of the pair hinge loss w.r.t. the touched embedding rows.

    Returns an all-zero gradient when the margin is inactive (including exactly
    at the kink).
    """
    norm = config.norm
    h, r, t = positive
    hn, _, tn = negative.triple
    ent, rel = table.entity_vectors, table.relation_vectors
    diff_pos = ent[h] + rel[r] - ent[t]
    diff_neg = ent[hn] + rel[r] - ent[tn]
    loss = config.margin + distance(diff_pos, norm) - distance(diff_neg, norm)
    grad = SparseGradient()
    zero = np.zeros(table.dim)
    if loss <= 0.0:
        for idx in (h, t, hn, tn):
            grad.add_entity(idx, zero)
        grad.add_relation(r, zero)
        return grad
    gp = _distance_grad(diff_pos, norm)
    gn = _distance_grad(diff_neg, norm)
    grad.add_entity(h, gp)
    grad.add_entity(t, -gp)
    grad.add_entity(hn, -gn)
    grad.add_entity(tn, gn)
    grad.add_relation(r, gp - gn)
    return grad


def pair_loss(positive: Triple, negative: NegativeTriple, table: EmbeddingTable, config: TrainConfig) -> float:
    d_pos = score_triple(*positive, table, config.norm)
    d_neg = score_triple(*negative.triple, table, config.norm)
    return hinge_loss(d_pos, d_neg, config.margin)


def apply_gradient(table: EmbeddingTable, grad: SparseGradient, learning_rate: float) -> None:
    for idx, g in grad.entity.items():
        table.entity_vectors[idx] -= learning_rate * g
    for idx, g in grad.relation.items():
        table.relation_vectors[idx] -= learning_rate * g


def sgd_step(positive: Triple, negative: NegativeTriple, table: EmbeddingTable, config: TrainConfig) -> float:
    """One SGD update on a single pair; returns the loss before the update."""
    loss = pair_loss(positive, negative, table, config)
    if loss > 0.0:
        apply_gradient(table, loss_gradient(positive, negative, table, config), config.learning_rate)
    return loss


def project_entities(table: EmbeddingTable) -> None:
    norms = np.linalg.norm(table.entity_vectors, axis=1, keepdims=True)
    table.entity_vectors /= np.maximum(norms, 1.0)


def _check_table(store: KnowledgeGraph, table: EmbeddingTable) -> None:
    if table.num_entities != store.num_entities or table.num_relations != store.num_relations:
        raise ContractError(
            f"table shape ({table.num_entities} entities, {table.num_relations} relations) does not match "
            f"store ({store.num_entities}, {store.num_relations})"
        )


def train_epoch(
    store: KnowledgeGraph,
    table: EmbeddingTable,
    config: TrainConfig,
    rng: np.random.Generator,
    epoch_index: int = 0,
) -> EpochStats:
    """One shuffled pass over all positives, updating ``table`` in place."""
    _check_table(store, table)
    positives = store.triples
    if not positives:
        return EpochStats(epoch_index, 0.0, 0.0)
    order = rng.permutation(len(positives))
    total = 0.0
    active = 0
    pairs = 0
    for start in range(0, len(order), config.batch_size):
        for i in order[start:start + config.batch_size]:
            pos = positives[i]
            for _ in range(config.negatives_per_positive):
                neg = sample_negative(pos, store, rng)
                loss = sgd_step(pos, neg, table, config)
                total += loss
                active += loss > 0.0
                pairs += 1
        project_entities(table)
        if not table.is_finite():
            raise TrainingError(f"non-finite embedding values in epoch {epoch_index} (batch starting at {start})")
    return EpochStats(epoch_index, total / pairs, active / pairs)


def train(
    store: KnowledgeGraph,
    config: TrainConfig,
    dim: int,
    table: EmbeddingTable | None = None,
) -> tuple[EmbeddingTable, list[EpochStats]]:
    """Initialise (unless ``table`` is given) and train for ``config.epochs`` epochs."""
    if table is None:
        table = init_embeddings(store.num_entities, store.num_relations, dim, config.seed)
    else:
        table = table.copy()
    # separate stream for sampling so init and training are independently seeded
    rng = np.random.default_rng([config.seed, 1])
    history = []
    for epoch in range(1, config.epochs + 1):
        stats = train_epoch(store, table, config, rng, epoch)
        history.append(stats)
        log.debug("epoch %d loss %.6f active %.3f", epoch, stats.mean_loss, stats.active_margin_fraction)
    return table, history


def tail_ranks(
    table: EmbeddingTable,
    test_triples: Sequence[Triple],
    known: Iterable[Triple],
    norm: str = L2,
) -> list[int]:
    """Filtered rank of the true tail among all entities (1 = best)."""
    norm = parse_norm(norm)
    known_tails: dict[tuple[int, int], set[int]] = {}
    for h, r, t in known:
        known_tails.setdefault((h, r), set()).add(t)
    ent = table.entity_vectors
    ranks = []
    for h, r, t in test_triples:
        diffs = ent[h] + table.relation_vectors[r] - ent
        if norm == L1:
            dist = np.abs(diffs).sum(axis=1)
        else:
            dist = np.sqrt((diffs * diffs).sum(axis=1))
        mask = np.ones(len(dist), dtype=bool)
        filtered = [x for x in known_tails.get((h, r), ()) if x != t]
        mask[filtered] = False
        ranks.append(1 + int(np.count_nonzero(dist[mask] < dist[t])))
    return ranks


def evaluate_link_prediction(
    table: EmbeddingTable,
    test_triples: Sequence[Triple],
    store: KnowledgeGraph,
    norm: str = L2,
    ks: Sequence[int] = (1, 3, 10),
) -> dict:
    """Filtered tail-prediction MRR and Hits@k.

    Known true triples (training store plus the test set itself) other than the
    target are removed from the candidate list. Ties count in favour of the
    true tail.
    """
    test_triples = [Triple(*t) for t in test_triples]
    if not test_triples:
        raise EvaluationError("empty test set")
    overlap = [t for t in test_triples if t in store]
    if overlap:
        raise EvaluationError(f"{len(overlap)} test triples also appear in the training store")
    ranks = np.asarray(tail_ranks(table, test_triples, list(store) + test_triples, norm), dtype=float)
    return {
        "MRR": float(np.mean(1.0 / ranks)),
        "hits_at": {int(k): float(np.mean(ranks <= k)) for k in ks},
        "num_test": len(test_triples),
    }


# -- persistence ---------------------------------------------------------

def format_header(fields: dict) -> str:
    return " ".join(f"{k}={v}" for k, v in fields.items())


def parse_header(line: str) -> dict[str, str]:
    out = {}
    for token in line.split():
        key, sep, value = token.partition("=")
        if not sep:
            raise ValueError(f"malformed header token {token!r}")
        out[key] = value
    return out


def _format_row(tag: str, idx: int, vec: np.ndarray) -> str:
    return f"{tag}\t{idx}\t" + " ".join(f"{x:.9g}" for x in vec) + "\n"


def write_vectors(path: str | Path, header: dict, entity_vectors: np.ndarray, relation_vectors: np.ndarray | None = None) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_header(header) + "\n")
        for i, vec in enumerate(entity_vectors):
            f.write(_format_row("E", i, vec))
        if relation_vectors is not None:
            for i, vec in enumerate(relation_vectors):
                f.write(_format_row("R", i, vec))


def read_vectors(path: str | Path) -> tuple[dict[str, str], np.ndarray, np.ndarray]:
    with open(path, encoding="utf-8") as f:
        header = parse_header(f.readline())
        dim = int(header["dim"])
        n_ent, n_rel = int(header["entities"]), int(header.get("relations", 0))
        ent = np.zeros((n_ent, dim))
        rel = np.zeros((n_rel, dim))
        seen_e = seen_r = 0
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            tag, idx, values = line.rstrip("\n").split("\t")
            vec = np.array([float(x) for x in values.split()])
            if vec.shape != (dim,):
                raise ValueError(f"line {lineno}: expected {dim} values, got {vec.size}")
            if tag == "E":
                ent[int(idx)] = vec
                seen_e += 1
            elif tag == "R":
                rel[int(idx)] = vec
                seen_r += 1
            else:
                raise ValueError(f"line {lineno}: unknown row tag {tag!r}")
    if seen_e != n_ent or seen_r != n_rel:
        raise ValueError(f"{path}: header declares {n_ent}/{n_rel} rows, found {seen_e}/{seen_r}")
    return header, ent, rel


def save_embeddings(path: str | Path, table: EmbeddingTable, norm: str = L2) -> None:
    header = {"dim": table.dim, "entities": table.num_entities, "relations": table.num_relations, "norm": parse_norm(norm)}
    write_vectors(path, header, table.entity_vectors, table.relation_vectors)


def load_embeddings(path: str | Path) -> tuple[EmbeddingTable, str]:
    header, ent, rel = read_vectors(path)
    return EmbeddingTable(ent, rel), parse_norm(header.get("norm", L2))
