"""Spatial graph encoder and the compact local tumor encoder.

The spatial encoder is the structure-learning layer with edits switched
off, run on the fixed k-NN graph. The local encoder reduces each frame of
the tumor patch with one linear map and folds the frames with a gated
recurrent update::

    z_t  = sigmoid(v_t W_z + h_{t-1} U_z + b_z)
    h~_t = tanh(v_t W_h + h_{t-1} U_h + b_h)
    h_t  = z_t * h_{t-1} + (1 - z_t) * h~_t

where ``v_t`` is the reduced frame. ``h_T`` is projected to the shared
embedding size.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import numcore as nc
from .errors import ContractError, EmptyGraphError
from .numcore import Tensor
from .structlearn import GslLayerParams, gsl_layer, init_layer, layer_dims

DEFAULT_EMBED_DIM = 16
DEFAULT_SPATIAL_LAYERS = 2
DEFAULT_LOCAL_DIM = 8
DEFAULT_LOCAL_HIDDEN = 16

LOCAL_KEYS = ("W_in", "b_in", "W_z", "U_z", "b_z", "W_h", "U_h", "b_h", "W_out", "b_out")


@dataclass
class SpatialEncoderParams:
    layers: list  # of GslLayerParams

    @classmethod
    def from_mapping(cls, params: Mapping, prefix: str = "spatial",
                     n_layers: int = DEFAULT_SPATIAL_LAYERS) -> "SpatialEncoderParams":
        return cls([GslLayerParams.from_mapping(params, f"{prefix}.{i}") for i in range(n_layers)])


@dataclass
class LocalEncoderParams:
    W_in: Tensor | np.ndarray   # (p**3, d_loc)
    b_in: Tensor | np.ndarray   # (d_loc,)
    W_z: Tensor | np.ndarray    # (d_loc, hidden)
    U_z: Tensor | np.ndarray    # (hidden, hidden)
    b_z: Tensor | np.ndarray    # (hidden,)
    W_h: Tensor | np.ndarray
    U_h: Tensor | np.ndarray
    b_h: Tensor | np.ndarray
    W_out: Tensor | np.ndarray  # (hidden, D)
    b_out: Tensor | np.ndarray  # (D,)

    @classmethod
    def from_mapping(cls, params: Mapping, prefix: str = "local") -> "LocalEncoderParams":
        return cls(**{k: params[f"{prefix}.{k}"] for k in LOCAL_KEYS})

    @property
    def out_dim(self) -> int:
        return np.shape(self.W_out)[1]


def init_spatial(rng: np.random.Generator, d_in: int, embed_dim: int = DEFAULT_EMBED_DIM,
                 n_layers: int = DEFAULT_SPATIAL_LAYERS, prefix: str = "spatial") -> dict:
    out = {}
    for i, (a, b) in enumerate(layer_dims(d_in, embed_dim, embed_dim, n_layers)):
        for k, v in init_layer(rng, a, b).items():
            out[f"{prefix}.{i}.{k}"] = v
    return out


def init_local(rng: np.random.Generator, n_voxels: int, embed_dim: int = DEFAULT_EMBED_DIM,
               d_loc: int = DEFAULT_LOCAL_DIM, hidden: int = DEFAULT_LOCAL_HIDDEN,
               prefix: str = "local") -> dict:
    def glorot(shape):
        lim = np.sqrt(6.0 / (shape[0] + shape[1]))
        return rng.uniform(-lim, lim, size=shape)

    vals = {
        "W_in": glorot((n_voxels, d_loc)),
        "b_in": np.zeros(d_loc),
        "W_z": glorot((d_loc, hidden)),
        "U_z": glorot((hidden, hidden)),
        "b_z": np.zeros(hidden),
        "W_h": glorot((d_loc, hidden)),
        "U_h": glorot((hidden, hidden)),
        "b_h": np.zeros(hidden),
        "W_out": glorot((hidden, embed_dim)),
        "b_out": np.zeros(embed_dim),
    }
    return {f"{prefix}.{k}": v for k, v in vals.items()}


def spatial_encode(g, p: SpatialEncoderParams, slope: float = nc.DEFAULT_SLOPE) -> Tensor:
    """Stacked attention layers over the fixed spatial adjacency.

    ``g`` is a graph or an ``(x, a_spatial)`` pair; a leading batch axis is allowed.
    """
    x, a = g if isinstance(g, tuple) else (g.x, g.a_spatial)
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.any(a.reshape(a.shape[:-2] + (-1,)), axis=-1)):
        raise EmptyGraphError("spatial graph has no edges")
    h = nc.as_tensor(x)
    for layer in p.layers:
        h, _, _ = gsl_layer(h, a, layer, 0, 0, slope)
    return h


def local_encode(patch, p: LocalEncoderParams) -> Tensor:
    """Encode a ``(p, p, p, T)`` patch (or a batch ``(B, p, p, p, T)``) to length ``D``."""
    patch = nc.as_tensor(patch)
    if patch.ndim not in (4, 5):
        raise ContractError(f"patch must be (p, p, p, T) or batched, got {patch.shape}")
    batched = patch.ndim == 5
    lead = patch.shape[:1] if batched else ()
    T = patch.shape[-1]
    n_vox = int(np.prod(patch.shape[-4:-1]))
    if np.shape(p.W_in)[0] != n_vox:
        raise ContractError(f"W_in expects {np.shape(p.W_in)[0]} voxels, patch has {n_vox}")
    frames = patch.reshape(lead + (n_vox, T))
    frames = nc.swapaxes(frames, -1, -2)  # (..., T, n_vox)
    reduced = nc.matmul(frames, p.W_in) + p.b_in  # (..., T, d_loc)
    hidden = np.shape(p.U_z)[0]
    h = nc.Tensor(np.zeros(lead + (hidden,)))
    for t in range(T):
        v = reduced[..., t, :]
        z = nc.sigmoid(nc.matmul(v, p.W_z) + nc.matmul(h, p.U_z) + p.b_z)
        cand = nc.tanh(nc.matmul(v, p.W_h) + nc.matmul(h, p.U_h) + p.b_h)
        h = z * h + (1.0 - z) * cand
    return nc.matmul(h, p.W_out) + p.b_out

