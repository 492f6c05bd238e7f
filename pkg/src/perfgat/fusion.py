"""Dual-attention fusion of tumor, spatial and temporal embeddings.

Node attention rescales each spatial node embedding by how well its
projection aligns with the projected tumor feature. Semantic attention
then mixes the rescaled spatial stream with the temporal stream through a
two-way softmax, and the fused node embeddings are mean-pooled into the
classifier input.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import numcore as nc
from .errors import ContractError, DimensionError
from .numcore import Tensor

FUSION_KEYS = ("W_N", "b_N", "W_F", "b_F", "W_s", "b_s", "q", "W_c", "b_c")
# standardization buffers in front of the head; refreshed by the trainer, never trained
BUFFER_KEYS = ("mu", "sigma")


@dataclass
class FusionParams:
    W_N: Tensor | np.ndarray  # node projection (D, d_a)
    b_N: Tensor | np.ndarray
    W_F: Tensor | np.ndarray  # tumor projection (D, d_a)
    b_F: Tensor | np.ndarray
    W_s: Tensor | np.ndarray  # semantic projection (D, d_q)
    b_s: Tensor | np.ndarray
    q: Tensor | np.ndarray    # semantic vector (d_q,)
    W_c: Tensor | np.ndarray  # classifier (D, 2)
    b_c: Tensor | np.ndarray  # (2,)
    mu: Tensor | np.ndarray | None = None     # (D,)
    sigma: Tensor | np.ndarray | None = None  # (D,)

    def __post_init__(self):
        if np.shape(self.W_N)[1] != np.shape(self.W_F)[1]:
            raise ContractError("node and tumor projections must share an output size")
        if np.shape(self.W_s)[1] != np.shape(self.q)[0]:
            raise ContractError("semantic projection and q must have the same length")

    @classmethod
    def from_mapping(cls, params: Mapping, prefix: str = "fusion") -> "FusionParams":
        kw = {k: params[f"{prefix}.{k}"] for k in FUSION_KEYS}
        kw.update({k: params[f"{prefix}.{k}"] for k in BUFFER_KEYS if f"{prefix}.{k}" in params})
        return cls(**kw)


@dataclass
class SampleFeatures:
    u_I: np.ndarray         # (D,)
    z_spatial: np.ndarray   # (N+1, D), before node attention
    z_temporal: np.ndarray  # (N+1, D)
    label: int

    def __post_init__(self):
        if self.z_spatial.shape != self.z_temporal.shape:
            raise DimensionError(
                f"spatial {self.z_spatial.shape} and temporal {self.z_temporal.shape} differ")
        if self.u_I.shape != (self.z_spatial.shape[1],):
            raise DimensionError(f"u_I has shape {self.u_I.shape}, expected "
                                 f"({self.z_spatial.shape[1]},)")


def init_fusion(rng: np.random.Generator, embed_dim: int, d_a: int | None = None,
                d_q: int | None = None, prefix: str = "fusion") -> dict:
    d_a = d_a or embed_dim
    d_q = d_q or embed_dim

    def glorot(shape):
        lim = np.sqrt(6.0 / (shape[0] + shape[-1]))
        return rng.uniform(-lim, lim, size=shape)

    vals = {
        "W_N": glorot((embed_dim, d_a)),
        "b_N": np.zeros(d_a),
        "W_F": glorot((embed_dim, d_a)),
        "b_F": np.zeros(d_a),
        "W_s": glorot((embed_dim, d_q)),
        "b_s": np.zeros(d_q),
        "q": glorot((d_q, 1))[:, 0],
        "W_c": np.zeros((embed_dim, 2)),
        "b_c": np.zeros(2),
        "mu": np.zeros(embed_dim),
        "sigma": np.ones(embed_dim),
    }
    return {f"{prefix}.{k}": v for k, v in vals.items()}


def raw_node_attention(z_spatial, u_I, p: FusionParams) -> Tensor:
    """Cosine between each projected node embedding and the projected tumor feature."""
    zn = nc.tanh(nc.matmul(z_spatial, p.W_N) + p.b_N)        # (..., n, d_a)
    uf = nc.tanh(nc.matmul(u_I, p.W_F) + p.b_F)              # (..., d_a)
    uf = uf.reshape(uf.shape[:-1] + (1,) + uf.shape[-1:])
    return nc.cosine_similarity(zn, uf, axis=-1)             # (..., n)


def normalize_node_attention(a) -> Tensor:
    """``n * softmax(a)``: positive weights averaging to one."""
    a = nc.as_tensor(a)
    return nc.softmax(a, axis=-1) * float(a.shape[-1])


def node_attention(z_spatial, u_I, p: FusionParams) -> Tensor:
    z_spatial = nc.as_tensor(z_spatial)
    if np.shape(u_I)[-1] != z_spatial.shape[-1]:
        raise DimensionError(f"u_I length {np.shape(u_I)[-1]} != embedding size "
                             f"{z_spatial.shape[-1]}")
    return normalize_node_attention(raw_node_attention(z_spatial, u_I, p))


def apply_node_attention(z_spatial, weights) -> Tensor:
    z_spatial, weights = nc.as_tensor(z_spatial), nc.as_tensor(weights)
    if weights.shape[-1] != z_spatial.shape[-2]:
        raise DimensionError(f"{weights.shape[-1]} weights for {z_spatial.shape[-2]} nodes")
    return z_spatial * weights.reshape(weights.shape + (1,))


def semantic_scores(z, p: FusionParams) -> Tensor:
    """Node-averaged ``q . tanh(z W_s + b_s)`` for one stream."""
    proj = nc.tanh(nc.matmul(z, p.W_s) + p.b_s)
    return nc.matmul(proj, p.q).mean(axis=-1)


def semantic_attention(z_s, z_t, p: FusionParams) -> tuple[Tensor, Tensor]:
    """Convex weights ``(beta_S, beta_T)`` over the spatial and temporal streams."""
    z_s, z_t = nc.as_tensor(z_s), nc.as_tensor(z_t)
    if z_s.shape != z_t.shape:
        raise DimensionError(f"stream shapes differ: {z_s.shape} vs {z_t.shape}")
    scores = nc.stack([semantic_scores(z_s, p), semantic_scores(z_t, p)], axis=-1)
    betas = nc.softmax(scores, axis=-1)
    return betas[..., 0], betas[..., 1]


def fuse(z_s, z_t, betas) -> Tensor:
    beta_s, beta_t = (nc.as_tensor(b) for b in betas)
    z_s, z_t = nc.as_tensor(z_s), nc.as_tensor(z_t)
    if beta_s.ndim == 0 and abs(float(beta_s) + float(beta_t) - 1.0) > 1e-9:
        raise ContractError("betas must sum to 1")
    expand = beta_s.shape + (1, 1)
    return z_s * beta_s.reshape(expand) + z_t * beta_t.reshape(expand)


def pool(z) -> Tensor:
    z = nc.as_tensor(z)
    if z.shape[-2] == 0:
        raise DimensionError("cannot pool an empty node set")
    return z.mean(axis=-2)


def classify(pooled, p: FusionParams) -> Tensor:
    if p.mu is not None:
        pooled = (nc.as_tensor(pooled) - p.mu) / p.sigma
    return nc.matmul(pooled, p.W_c) + p.b_c


def pool_and_classify(z, p: FusionParams) -> Tensor:
    """Mean over nodes, standardize with the stored buffers, linear head to two logits."""
    return classify(pool(z), p)


def fused_embedding(z_spatial, z_temporal, u_I, p: FusionParams,
                    use_node_attention: bool = True) -> Tensor:
    """Fused node embeddings ``Z`` from the three streams."""
    if use_node_attention:
        w = node_attention(z_spatial, u_I, p)
        z_s = apply_node_attention(z_spatial, w)
    else:
        z_s = nc.as_tensor(z_spatial)
    betas = semantic_attention(z_s, z_temporal, p)
    return fuse(z_s, z_temporal, betas)


def fusion_forward(z_spatial, z_temporal, u_I, p: FusionParams,
                   use_node_attention: bool = True) -> Tensor:
    """Logits from the three embedding streams."""
    return pool_and_classify(fused_embedding(z_spatial, z_temporal, u_I, p,
                                             use_node_attention), p)


def head_statistics(pooled: np.ndarray, floor: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and std of pooled embeddings; tiny spreads fall back to 1."""
    pooled = np.asarray(pooled, dtype=np.float64)
    mu = pooled.mean(axis=0)
    sigma = pooled.std(axis=0)
    return mu, np.where(sigma > floor, sigma, 1.0)
