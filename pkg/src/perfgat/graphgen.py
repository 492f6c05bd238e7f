"""Temporal and spatial graphs over brain regions plus one tumor node."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSeriesError, DomainError, GeometryError
from .synthdata import LabeledVolume

DEFAULT_TAU = 0.5
DEFAULT_K = 5


@dataclass
class SpatioTemporalGraph:
    x: np.ndarray           # (N+1, T), last row is the tumor node
    a_temporal: np.ndarray  # (N+1, N+1) in {0, 1}
    a_spatial: np.ndarray   # (N+1, N+1) in {0, 1}
    centroids: np.ndarray   # (N+1, 3)
    label: int = 0

    @property
    def n_nodes(self) -> int:
        return self.x.shape[0]

    @property
    def tumor_index(self) -> int:
        return self.x.shape[0] - 1


def correlation_matrix(x: np.ndarray) -> np.ndarray:
    """Pearson correlation between the rows of ``x``, diagonal pinned to 1."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] < 3:
        raise DomainError(f"correlation needs an (N, T>=3) matrix, got {x.shape}")
    centered = x - x.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered * centered).sum(axis=1))
    flat = np.flatnonzero(norms == 0)
    if flat.size:
        raise DegenerateSeriesError(f"node {int(flat[0])} has a zero-variance series")
    unit = centered / norms[:, None]
    c = unit @ unit.T
    c = np.clip((c + c.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(c, 1.0)
    return c


def threshold_temporal_adjacency(c: np.ndarray, tau: float = DEFAULT_TAU,
                                 absolute: bool = False) -> np.ndarray:
    """Edge where the correlation strictly exceeds ``tau``; no self-loops.

    ``absolute=True`` thresholds ``|C|`` instead of the signed value.
    """
    c = np.asarray(c, dtype=np.float64)
    if not 0.0 < tau < 1.0:
        raise DomainError(f"tau must lie in (0, 1), got {tau}")
    if c.ndim != 2 or c.shape[0] != c.shape[1] or not np.allclose(c, c.T):
        raise DomainError("correlation matrix must be square and symmetric")
    vals = np.abs(c) if absolute else c
    a = (vals > tau).astype(np.float64)
    np.fill_diagonal(a, 0.0)
    return a


def knn_spatial_adjacency(centroids: np.ndarray, k: int = DEFAULT_K) -> np.ndarray:
    """Union-symmetrized k-nearest-neighbour graph on Euclidean distance.

    Equal distances go to the lower node index.
    """
    pts = np.asarray(centroids, dtype=np.float64)
    n = pts.shape[0]
    if not 1 <= k < n:
        raise DomainError(f"k must satisfy 1 <= k < {n}, got {k}")
    diff = pts[:, None, :] - pts[None, :, :]
    d = np.sqrt((diff * diff).sum(axis=-1))
    iu = np.triu_indices(n, 1)
    dup = np.flatnonzero(d[iu] == 0)
    if dup.size:
        i, j = iu[0][dup[0]], iu[1][dup[0]]
        raise GeometryError(f"duplicate centroids at nodes {i} and {j}")
    a = np.zeros((n, n))
    for i in range(n):
        order = np.lexsort((np.arange(n), d[i]))
        nbrs = [j for j in order if j != i][:k]
        a[i, nbrs] = 1.0
    a = np.maximum(a, a.T)
    np.fill_diagonal(a, 0.0)
    return a


def build_graphs(v: LabeledVolume, tau: float = DEFAULT_TAU, k: int = DEFAULT_K,
                 absolute: bool = False) -> SpatioTemporalGraph:
    x = np.vstack([v.region_series, v.tumor_series[None, :]])
    centroids = np.vstack([v.region_centroids, v.tumor_centroid[None, :]])
    c = correlation_matrix(x)
    return SpatioTemporalGraph(
        x=x,
        a_temporal=threshold_temporal_adjacency(c, tau, absolute=absolute),
        a_spatial=knn_spatial_adjacency(centroids, k),
        centroids=centroids,
        label=v.label,
    )
