"""Attention-guided edge editing on the temporal graph.

Each layer scores the current edges and the edges of the negative graph
with the same attention head, drops the ``alpha`` weakest existing pairs,
adds the ``beta`` strongest missing pairs, then aggregates neighbour
features over the edited graph. Selection is a hard, non-differentiable
step; gradients only flow through the attention weights used in the
aggregation.

All dense helpers accept a leading batch axis: ``x`` of shape ``(..., n, d)``
and adjacency of shape ``(..., n, n)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import numcore as nc
from .errors import ContractError, EmptyGraphError, StructuralCollapseError
from .numcore import Tensor

DEFAULT_ALPHA = 2
DEFAULT_BETA = 2
DEFAULT_MAX_LAYER = 2
DEFAULT_HIDDEN_DIM = 16


@dataclass
class GslLayerParams:
    W_A: Tensor | np.ndarray   # (d_in, d_out)
    w_a: Tensor | np.ndarray   # (2 * d_out,)
    W_n: Tensor | np.ndarray   # (d_in, d_out)

    def __post_init__(self):
        d_in, d_out = np.shape(self.W_A)
        if np.shape(self.w_a) != (2 * d_out,):
            raise ContractError(f"w_a must have length {2 * d_out}, got {np.shape(self.w_a)}")
        if np.shape(self.W_n) != (d_in, d_out):
            raise ContractError(f"W_n must be {(d_in, d_out)}, got {np.shape(self.W_n)}")

    @property
    def d_out(self) -> int:
        return np.shape(self.W_A)[1]

    @classmethod
    def from_mapping(cls, params: Mapping, prefix: str) -> "GslLayerParams":
        return cls(params[f"{prefix}.W_A"], params[f"{prefix}.w_a"], params[f"{prefix}.W_n"])


@dataclass(frozen=True)
class GslConfig:
    alpha: int = DEFAULT_ALPHA
    beta: int = DEFAULT_BETA
    max_layer: int = DEFAULT_MAX_LAYER
    hidden_dim: int = DEFAULT_HIDDEN_DIM

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ContractError("alpha and beta must be >= 0")
        if self.max_layer < 1:
            raise ContractError("max_layer must be >= 1")
        if self.hidden_dim < 1:
            raise ContractError("hidden_dim must be >= 1")


@dataclass
class EdgeScores:
    edges: list            # directed (i, j) with a_ij = 1, row-major order
    scores: np.ndarray     # e_ij for each entry of ``edges``
    matrix: Tensor         # dense (n, n) attention, zero off the edge set

    def as_dict(self) -> dict:
        return {e: float(s) for e, s in zip(self.edges, self.scores)}


@dataclass
class EdgeSelection:
    pairs: list            # undirected (i, j), i < j
    clipped: bool = False


@dataclass
class LayerRecord:
    deleted: list
    added: list
    pairs_before: int
    pairs_after: int
    clipped: bool


@dataclass
class GslResult:
    adjacency: np.ndarray
    z: Tensor
    layer_adjacencies: list = field(default_factory=list)
    history: list = field(default_factory=list)


def init_layer(rng: np.random.Generator, d_in: int, d_out: int) -> dict[str, np.ndarray]:
    """Glorot-uniform weights for one attention layer."""
    def glorot(shape):
        lim = np.sqrt(6.0 / (shape[0] + shape[-1]))
        return rng.uniform(-lim, lim, size=shape)

    lim_a = np.sqrt(6.0 / (2 * d_out + 1))
    return {
        "W_A": glorot((d_in, d_out)),
        "w_a": rng.uniform(-lim_a, lim_a, size=2 * d_out),
        "W_n": glorot((d_in, d_out)),
    }


def layer_dims(d_in: int, hidden_dim: int, d_out: int, n_layers: int) -> list[tuple[int, int]]:
    dims = [d_in] + [hidden_dim] * (n_layers - 1) + [d_out]
    return list(zip(dims[:-1], dims[1:]))


def _check_adjacency(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != a.shape[-2]:
        raise ContractError(f"adjacency must be square, got {a.shape}")
    if not np.array_equal(a, np.swapaxes(a, -1, -2)):
        raise ContractError("adjacency must be symmetric")
    if np.any(np.diagonal(a, axis1=-2, axis2=-1) != 0):
        raise ContractError("adjacency must have a zero diagonal")
    return a


def negative_graph(a: np.ndarray) -> np.ndarray:
    """Off-diagonal complement of a symmetric adjacency."""
    a = _check_adjacency(a)
    n = a.shape[-1]
    return (1.0 - a) * (1.0 - np.eye(n))


def n_pairs(a: np.ndarray) -> int:
    return int(np.triu(np.asarray(a), 1).sum())


def attention_matrix(x, a: np.ndarray, p: GslLayerParams,
                     slope: float = nc.DEFAULT_SLOPE) -> Tensor:
    """Dense edge attention: row ``i`` is the softmax over the neighbours of ``i``.

    Rows of isolated nodes are all zero.
    """
    x = nc.as_tensor(x)
    h = nc.matmul(x, p.W_A)
    d = p.d_out
    w_a = nc.as_tensor(p.w_a)
    src = nc.matmul(h, w_a[:d])
    dst = nc.matmul(h, w_a[d:])
    raw = src.reshape(src.shape + (1,)) + dst.reshape(dst.shape[:-1] + (1,) + dst.shape[-1:])
    raw = nc.leaky_relu(raw, slope)
    mask = np.broadcast_to(np.asarray(a) > 0, raw.shape)
    return nc.softmax(raw, axis=-1, mask=mask)


def edge_attention(x, a: np.ndarray, p: GslLayerParams,
                   slope: float = nc.DEFAULT_SLOPE) -> EdgeScores:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ContractError("edge_attention scores one graph; use attention_matrix for batches")
    if not np.any(a):
        raise EmptyGraphError("cannot score a graph with no edges")
    e = attention_matrix(x, a, p, slope)
    rows, cols = np.nonzero(a)
    edges = [(int(i), int(j)) for i, j in zip(rows, cols)]
    return EdgeScores(edges=edges, scores=e.data[rows, cols].copy(), matrix=e)


def _pair_scores(e: np.ndarray, a: np.ndarray) -> list[tuple[float, int, int]]:
    iu, ju = np.nonzero(np.triu(a, 1))
    sym = (e[iu, ju] + e[ju, iu]) / 2.0
    return [(float(s), int(i), int(j)) for s, i, j in zip(sym, iu, ju)]


def select_pairs(e: np.ndarray, a: np.ndarray, count: int, mode: str) -> EdgeSelection:
    """Pick ``count`` undirected pairs of ``a`` by symmetrized attention.

    ``mode`` is ``"lowest"`` or ``"highest"``; ties go to the
    lexicographically smaller ``(i, j)``.
    """
    if mode not in ("lowest", "highest"):
        raise ContractError(f"mode must be 'lowest' or 'highest', got {mode!r}")
    if count < 0:
        raise ContractError("count must be >= 0")
    cands = _pair_scores(np.asarray(e), np.asarray(a))
    sign = 1.0 if mode == "lowest" else -1.0
    cands.sort(key=lambda c: (sign * c[0], c[1], c[2]))
    clipped = count > len(cands)
    return EdgeSelection([(i, j) for _, i, j in cands[:count]], clipped)


def select_edges(scores: EdgeScores, count: int, mode: str) -> EdgeSelection:
    n = scores.matrix.shape[-1]
    a = np.zeros((n, n))
    for i, j in scores.edges:
        a[i, j] = 1.0
    return select_pairs(scores.matrix.data, np.maximum(a, a.T), count, mode)


def update_node_features(x, scores, W_n) -> Tensor:
    """``x'_i = sum_j e_ij W_n x_j`` over the neighbours of ``i``."""
    e = scores.matrix if isinstance(scores, EdgeScores) else nc.as_tensor(scores)
    return nc.matmul(e, nc.matmul(x, W_n))


def _edit(a: np.ndarray, e_pos: np.ndarray, e_neg: np.ndarray | None,
          alpha: int, beta: int) -> tuple[np.ndarray, LayerRecord]:
    before = n_pairs(a)
    neg = negative_graph(a)
    drop = select_pairs(e_pos, a, alpha, "lowest")
    if e_neg is not None:
        add = select_pairs(e_neg, neg, beta, "highest")
    else:
        add = EdgeSelection([], clipped=beta > n_pairs(neg))
    if set(drop.pairs) & set(add.pairs):
        raise ContractError("a pair was selected for both deletion and addition")
    out = a.copy()
    for i, j in drop.pairs:
        out[i, j] = out[j, i] = 0.0
    for i, j in add.pairs:
        out[i, j] = out[j, i] = 1.0
    if not np.any(out):
        raise StructuralCollapseError("edge edits removed every edge of the temporal graph")
    rec = LayerRecord(drop.pairs, add.pairs, before, n_pairs(out), drop.clipped or add.clipped)
    return out, rec


def gsl_layer(x, a: np.ndarray, p: GslLayerParams, alpha: int, beta: int,
              slope: float = nc.DEFAULT_SLOPE) -> tuple[Tensor, np.ndarray, list[LayerRecord]]:
    """One round of score, edit, re-score and aggregate.

    Scores use the incoming features; the aggregation uses the edited graph.
    """
    x = nc.as_tensor(x)
    a = np.asarray(a, dtype=np.float64)
    batched = a.ndim == 3
    a_b = a if batched else a[None]
    records = []
    if alpha == 0 and beta == 0:
        edited = a_b.copy()
        for ab in a_b:
            k = n_pairs(ab)
            records.append(LayerRecord([], [], k, k, False))
    else:
        neg = negative_graph(a_b)
        e_pos = nc.constant(attention_matrix(nc.constant(x), a, p, slope)).data
        e_pos = e_pos if batched else e_pos[None]
        e_neg = None
        if beta > 0 and np.any(neg):
            e_neg = attention_matrix(nc.constant(x), neg if batched else neg[0], p, slope).data
            e_neg = e_neg if batched else e_neg[None]
        edited = np.empty_like(a_b)
        for b in range(a_b.shape[0]):
            en = None if e_neg is None or not np.any(neg[b]) else e_neg[b]
            edited[b], rec = _edit(a_b[b], e_pos[b], en, alpha, beta)
            records.append(rec)
    a_new = edited if batched else edited[0]
    e = attention_matrix(x, a_new, p, slope)
    return update_node_features(x, e, p.W_n), a_new, records


def _layers(params) -> list[GslLayerParams]:
    return [p if isinstance(p, GslLayerParams) else GslLayerParams(**p) for p in params]


def run_structure_learning(g, params: Sequence, cfg: GslConfig,
                           slope: float = nc.DEFAULT_SLOPE) -> GslResult:
    """Run ``cfg.max_layer`` rounds of edge editing and aggregation.

    ``g`` is a :class:`~perfgat.graphgen.SpatioTemporalGraph` or an
    ``(x, adjacency)`` pair, optionally batched. Returns the refined
    adjacency and the final node embeddings.
    """
    if isinstance(g, tuple):
        x, a = g
    else:
        x, a = g.x, g.a_temporal
    layers = _layers(params)
    if len(layers) != cfg.max_layer:
        raise ContractError(f"expected {cfg.max_layer} layer parameter sets, got {len(layers)}")
    a = _check_adjacency(a)
    if not np.any(a) and cfg.beta == 0:
        raise EmptyGraphError("temporal graph has no edges")
    h = nc.as_tensor(x)
    adjs, history = [], []
    for p in layers:
        h, a, recs = gsl_layer(h, a, p, cfg.alpha, cfg.beta, slope)
        adjs.append(a)
        history.append(recs if a.ndim == 3 else recs[0])
    return GslResult(adjacency=a, z=h, layer_adjacencies=adjs, history=history)


def forward_fixed(x, layer_adjacencies: Sequence[np.ndarray], params: Sequence,
                  slope: float = nc.DEFAULT_SLOPE) -> Tensor:
    """Replay the aggregation path with edge edits frozen to ``layer_adjacencies``."""
    h = nc.as_tensor(x)
    for a, p in zip(layer_adjacencies, _layers(params)):
        e = attention_matrix(h, a, p, slope)
        h = update_node_features(h, e, p.W_n)
    return h
