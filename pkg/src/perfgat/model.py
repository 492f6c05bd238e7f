"""Full forward pass: graphs and tumor patch in, two class logits out.

Parameters live in one flat ``{name: ndarray}`` dict grouped by prefix
(``temporal.``, ``spatial.``, ``local.``, ``fusion.``), which keeps the
optimizer, checkpoints and gradient checks uniform.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from typing import Mapping, Sequence

import numpy as np

from . import numcore as nc
from .encoders import (
    LocalEncoderParams,
    SpatialEncoderParams,
    init_local,
    init_spatial,
    local_encode,
    spatial_encode,
)
from .errors import ConfigError
from .fusion import (
    BUFFER_KEYS,
    FusionParams,
    SampleFeatures,
    fused_embedding,
    fusion_forward,
    head_statistics,
    init_fusion,
    pool,
)
from .graphgen import SpatioTemporalGraph, build_graphs
from .numcore import Tensor
from .structlearn import GslConfig, GslLayerParams, init_layer, layer_dims, run_structure_learning
from .synthdata import LabeledVolume

GROUPS = ("temporal", "spatial", "local", "fusion")
ENCODER_GROUPS = ("temporal", "spatial", "local")


@dataclass(frozen=True)
class ModelConfig:
    tau: float = 0.5
    k: int = 5
    absolute_threshold: bool = False
    alpha: int = 2
    beta: int = 2
    max_layer: int = 2
    hidden_dim: int = 16
    embed_dim: int = 16
    spatial_layers: int = 2
    local_dim: int = 8
    local_hidden: int = 16
    slope: float = 0.2
    node_attention: bool = True

    def __post_init__(self):
        def bad(key, why):
            raise ConfigError(f"model.{key}: {why}")

        if not 0.0 < self.tau < 1.0:
            bad("tau", f"must lie in (0, 1), got {self.tau}")
        if self.k < 1:
            bad("k", f"must be >= 1, got {self.k}")
        if self.alpha < 0 or self.beta < 0:
            bad("alpha" if self.alpha < 0 else "beta", "must be >= 0")
        for key in ("max_layer", "hidden_dim", "embed_dim", "spatial_layers",
                    "local_dim", "local_hidden"):
            if getattr(self, key) < 1:
                bad(key, "must be >= 1")
        if not 0.0 < self.slope < 1.0:
            bad("slope", f"must lie in (0, 1), got {self.slope}")

    @property
    def gsl(self) -> GslConfig:
        return GslConfig(self.alpha, self.beta, self.max_layer, self.hidden_dim)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown model keys: {', '.join(unknown)}")
        return cls(**d)

    def with_(self, **kw) -> "ModelConfig":
        return replace(self, **kw)


@dataclass
class Batch:
    x: np.ndarray          # (B, n, T)
    a_temporal: np.ndarray  # (B, n, n)
    a_spatial: np.ndarray   # (B, n, n)
    patch: np.ndarray       # (B, p, p, p, T)
    labels: np.ndarray      # (B,)

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass
class Sample:
    graph: SpatioTemporalGraph
    patch: np.ndarray
    label: int


def prepare(volumes: Sequence[LabeledVolume], cfg: ModelConfig) -> list[Sample]:
    return [Sample(build_graphs(v, cfg.tau, cfg.k, cfg.absolute_threshold), v.tumor_patch,
                   int(v.label)) for v in volumes]


def collate(samples: Sequence[Sample]) -> Batch:
    return Batch(
        x=np.stack([s.graph.x for s in samples]),
        a_temporal=np.stack([s.graph.a_temporal for s in samples]),
        a_spatial=np.stack([s.graph.a_spatial for s in samples]),
        patch=np.stack([s.patch for s in samples]),
        labels=np.array([s.label for s in samples], dtype=np.int64),
    )


def init_params(cfg: ModelConfig, n_timepoints: int, patch_size: int,
                seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([seed, 100])
    params = {}
    dims = layer_dims(n_timepoints, cfg.hidden_dim, cfg.embed_dim, cfg.max_layer)
    for i, (a, b) in enumerate(dims):
        for k, v in init_layer(rng, a, b).items():
            params[f"temporal.{i}.{k}"] = v
    params.update(init_spatial(rng, n_timepoints, cfg.embed_dim, cfg.spatial_layers))
    params.update(init_local(rng, patch_size ** 3, cfg.embed_dim, cfg.local_dim,
                             cfg.local_hidden))
    params.update(init_fusion_params(cfg, seed))
    return params


def init_fusion_params(cfg: ModelConfig, seed: int, stage: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng([seed, 200, stage])
    return init_fusion(rng, cfg.embed_dim)


def temporal_layers(params: Mapping, cfg: ModelConfig) -> list[GslLayerParams]:
    return [GslLayerParams.from_mapping(params, f"temporal.{i}") for i in range(cfg.max_layer)]


def encode(params: Mapping, batch: Batch, cfg: ModelConfig) -> tuple[Tensor, Tensor, Tensor]:
    """``(u_I, z_spatial, z_temporal)`` for every sample in ``batch``."""
    z_t = run_structure_learning((batch.x, batch.a_temporal), temporal_layers(params, cfg),
                                 cfg.gsl, cfg.slope).z
    z_s = spatial_encode((batch.x, batch.a_spatial),
                         SpatialEncoderParams.from_mapping(params, "spatial", cfg.spatial_layers),
                         cfg.slope)
    u = local_encode(batch.patch, LocalEncoderParams.from_mapping(params, "local"))
    return u, z_s, z_t


def forward(params: Mapping, batch: Batch, cfg: ModelConfig) -> Tensor:
    u, z_s, z_t = encode(params, batch, cfg)
    return fusion_forward(z_s, z_t, u, FusionParams.from_mapping(params), cfg.node_attention)


def forward_features(params: Mapping, u_I, z_spatial, z_temporal, cfg: ModelConfig) -> Tensor:
    return fusion_forward(z_spatial, z_temporal, u_I, FusionParams.from_mapping(params),
                          cfg.node_attention)


def pooled_embedding(params: Mapping, batch: Batch, cfg: ModelConfig) -> Tensor:
    u, z_s, z_t = encode(params, batch, cfg)
    return pool(fused_embedding(z_s, z_t, u, FusionParams.from_mapping(params),
                                cfg.node_attention))


def buffer_names(prefix: str = "fusion") -> list[str]:
    return [f"{prefix}.{k}" for k in BUFFER_KEYS]


def refresh_head_buffers(params: Mapping, pooled: np.ndarray) -> dict:
    """Copy of ``params`` with the head standardization set from ``pooled``."""
    mu, sigma = head_statistics(pooled)
    out = dict(params)
    out["fusion.mu"], out["fusion.sigma"] = mu, sigma
    return out


def extract_features(params: Mapping, samples: Sequence[Sample], cfg: ModelConfig,
                     batch_size: int = 32) -> list[SampleFeatures]:
    out = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        u, z_s, z_t = encode(params, collate(chunk), cfg)
        for i, s in enumerate(chunk):
            out.append(SampleFeatures(u.data[i].copy(), z_s.data[i].copy(),
                                      z_t.data[i].copy(), s.label))
    return out


def group_of(name: str) -> str:
    return name.split(".", 1)[0]
