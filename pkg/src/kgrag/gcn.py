"""Degree-normalised graph convolution over the symmetrised, self-looped entity graph."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .errors import ContractError, TrainingError
from .kg_store import KnowledgeGraph
from .transe import (
    EmbeddingTable,
    NegativeTriple,
    TrainConfig,
    loss_gradient,
    pair_loss,
    read_vectors,
    sample_negative,
    write_vectors,
)

RELU = "relu"
IDENTITY = "identity"


@dataclass
class NormalizedAdjacency:
    """Edge list (i, j, 1/sqrt(deg(i) deg(j))); both directions and all self-loops present."""

    node_count: int
    rows: np.ndarray
    cols: np.ndarray
    weights: np.ndarray

    @property
    def edges(self) -> list[tuple[int, int, float]]:
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.weights.tolist()))

    def degrees(self) -> np.ndarray:
        return np.bincount(self.rows, minlength=self.node_count)

    def to_sparse(self) -> sparse.csr_matrix:
        return sparse.csr_matrix((self.weights, (self.rows, self.cols)), shape=(self.node_count, self.node_count))

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.node_count, self.node_count))
        out[self.rows, self.cols] = self.weights
        return out


@dataclass
class GcnLayerWeights:
    weight: np.ndarray
    activation: str = RELU

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=float)
        if self.weight.ndim != 2:
            raise ContractError("layer weight must be a 2-d matrix")
        if self.activation not in (RELU, IDENTITY):
            raise ContractError(f"unknown activation {self.activation!r}")
        if not np.isfinite(self.weight).all():
            raise ContractError("layer weight has non-finite entries")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class NodeRepresentations:
    matrix: np.ndarray
    layer_index: int

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])

    def __getitem__(self, idx):
        return self.matrix[idx]


def adjacency_from_edges(node_count: int, edges: Iterable[tuple[int, int]]) -> NormalizedAdjacency:
    """Symmetrise ``edges``, add a self-loop per node and apply symmetric degree normalisation."""
    if node_count < 1:
        raise ContractError("cannot build an adjacency for an empty graph")
    pairs = {(i, i) for i in range(node_count)}
    for i, j in edges:
        pairs.add((i, j))
        pairs.add((j, i))
    ordered = sorted(pairs)
    rows = np.array([p[0] for p in ordered], dtype=np.int64)
    cols = np.array([p[1] for p in ordered], dtype=np.int64)
    deg = np.bincount(rows, minlength=node_count).astype(float)
    weights = 1.0 / np.sqrt(deg[rows] * deg[cols])
    return NormalizedAdjacency(node_count, rows, cols, weights)


def normalized_adjacency(store: KnowledgeGraph) -> NormalizedAdjacency:
    if store.num_entities == 0:
        raise ContractError("cannot build an adjacency for an empty graph")
    return adjacency_from_edges(store.num_entities, ((t.head, t.tail) for t in store))


def _activate(x: np.ndarray, activation: str) -> np.ndarray:
    return np.maximum(x, 0.0) if activation == RELU else x


def gcn_layer_forward(H: NodeRepresentations, A: NormalizedAdjacency, W: GcnLayerWeights) -> NodeRepresentations:
    """sigma(sum_j A_ij W h_j) for every node i, as a sparse product."""
    h = np.asarray(H.matrix, dtype=float)
    if h.ndim != 2 or h.shape[0] != A.node_count:
        raise ContractError(f"H has {h.shape[0] if h.ndim else 0} rows, adjacency has {A.node_count} nodes")
    if h.shape[1] != W.in_dim:
        raise ContractError(f"H has {h.shape[1]} columns, layer expects {W.in_dim}")
    out = A.to_sparse() @ (h @ W.weight)
    return NodeRepresentations(_activate(out, W.activation), H.layer_index + 1)


def init_gcn_layers(in_dim: int, num_layers: int = 2, seed: int = 7, hidden_dim: int | None = None) -> list[GcnLayerWeights]:
    """Uniform(+-1/sqrt(in_dim)) weights; relu on hidden layers, identity on the last."""
    if num_layers < 1:
        raise ContractError("need at least one GCN layer")
    hidden_dim = hidden_dim or in_dim
    rng = np.random.default_rng([seed, 2])
    layers = []
    d_in = in_dim
    for i in range(num_layers):
        bound = 1.0 / math.sqrt(d_in)
        W = rng.uniform(-bound, bound, size=(d_in, hidden_dim))
        layers.append(GcnLayerWeights(W, RELU if i < num_layers - 1 else IDENTITY))
        d_in = hidden_dim
    return layers


def forward(H0: np.ndarray, A: NormalizedAdjacency, layers: Sequence[GcnLayerWeights]) -> NodeRepresentations:
    if not layers:
        raise ContractError("empty GCN layer list")
    H = NodeRepresentations(np.asarray(H0, dtype=float), 0)
    for W in layers:
        H = gcn_layer_forward(H, A, W)
    return H


def forward_with_cache(H0: np.ndarray, A_sp: sparse.csr_matrix, layers: Sequence[GcnLayerWeights]):
    """Forward pass keeping (aggregated input, pre-activation) per layer for backprop."""
    cache = []
    H = H0
    for W in layers:
        M = A_sp @ H
        pre = M @ W.weight
        cache.append((M, pre))
        H = _activate(pre, W.activation)
    return H, cache


def backward(grad_out: np.ndarray, A_sp: sparse.csr_matrix, layers: Sequence[GcnLayerWeights], cache) -> list[np.ndarray]:
    """Gradients w.r.t. each layer weight given dLoss/dH_L. Uses A = A^T."""
    grads: list[np.ndarray] = [None] * len(layers)  # type: ignore[list-item]
    G = grad_out
    for l in range(len(layers) - 1, -1, -1):
        M, pre = cache[l]
        if layers[l].activation == RELU:
            G = G * (pre > 0.0)
        grads[l] = M.T @ G
        if l:
            G = A_sp @ (G @ layers[l].weight.T)
    return grads


def margin_loss_and_grads(
    H0: np.ndarray,
    A_sp: sparse.csr_matrix,
    layers: Sequence[GcnLayerWeights],
    relation_vectors: np.ndarray,
    pairs: Sequence[tuple[tuple[int, int, int], NegativeTriple]],
    config: TrainConfig,
) -> tuple[float, list[np.ndarray]]:
    """Mean pair hinge loss with GCN outputs as entity vectors, and its weight gradients."""
    H, cache = forward_with_cache(H0, A_sp, layers)
    view = EmbeddingTable(H, relation_vectors)
    grad_H = np.zeros_like(H)
    total = 0.0
    for pos, neg in pairs:
        total += pair_loss(pos, neg, view, config)
        for idx, g in loss_gradient(pos, neg, view, config).entity.items():
            grad_H[idx] += g
    n = max(len(pairs), 1)
    grads = backward(grad_H / n, A_sp, layers, cache)
    return total / n, grads


def fine_tune_layers(
    table: EmbeddingTable,
    store: KnowledgeGraph,
    layers: Sequence[GcnLayerWeights],
    config: TrainConfig,
) -> tuple[list[GcnLayerWeights], list[float]]:
    """Mini-batch gradient descent on layer weights; TransE inputs and relations stay frozen."""
    A_sp = normalized_adjacency(store).to_sparse()
    layers = [GcnLayerWeights(W.weight.copy(), W.activation) for W in layers]
    rng = np.random.default_rng([config.seed, 3])
    positives = store.triples
    history = []
    for epoch in range(config.epochs):
        order = rng.permutation(len(positives))
        losses = []
        for start in range(0, len(order), config.batch_size):
            pairs = []
            for i in order[start:start + config.batch_size]:
                pos = positives[i]
                for _ in range(config.negatives_per_positive):
                    pairs.append((pos, sample_negative(pos, store, rng)))
            loss, grads = margin_loss_and_grads(table.entity_vectors, A_sp, layers, table.relation_vectors, pairs, config)
            for W, g in zip(layers, grads):
                W.weight -= config.learning_rate * g
                if not np.isfinite(W.weight).all():
                    raise TrainingError(f"non-finite GCN weights in fine-tune epoch {epoch + 1}")
            losses.append(loss)
        history.append(float(np.mean(losses)) if losses else 0.0)
    return layers, history


def refine_embeddings(
    table: EmbeddingTable,
    store: KnowledgeGraph,
    layers: Sequence[GcnLayerWeights] | None = None,
    fine_tune: TrainConfig | None = None,
    seed: int = 7,
) -> NodeRepresentations:
    """Propagate TransE entity vectors through the GCN stack (default: two layers).

    With ``fine_tune`` the layer weights are first optimised with the TransE
    margin loss computed on the GCN outputs.
    """
    if layers is None:
        layers = init_gcn_layers(table.dim, 2, seed)
    if not layers:
        raise ContractError("empty GCN layer list")
    if layers[0].in_dim != table.dim:
        raise ContractError(f"first layer expects {layers[0].in_dim} inputs, table dim is {table.dim}")
    if fine_tune is not None:
        layers, _ = fine_tune_layers(table, store, layers, fine_tune)
    return forward(table.entity_vectors, normalized_adjacency(store), layers)


def save_representations(path, reps: NodeRepresentations, norm: str = "L2") -> None:
    header = {
        "dim": reps.dim,
        "entities": reps.matrix.shape[0],
        "relations": 0,
        "norm": norm,
        "kind": "gcn",
        "layers": reps.layer_index,
    }
    write_vectors(path, header, reps.matrix)


def load_representations(path) -> NodeRepresentations:
    header, ent, _ = read_vectors(path)
    if header.get("kind") != "gcn":
        raise ValueError(f"{path} is not a GCN representation file (kind={header.get('kind')!r})")
    return NodeRepresentations(ent, int(header.get("layers", 0)))
