"""Synthetic parcellated perfusion cohorts.

Each subject gets N region curves plus a small 4D tumor patch. Curves follow
a gamma-variate signal drop (the transient susceptibility dip of a contrast
bolus). A subject-level bolus arrival shared by all regions gives the region
curves correlated, but not identical, timing. Minority subjects have the dip
depth of the tumor and of its three nearest regions scaled by
``1 + class_effect``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError, DomainError

N_ADJACENT = 3


@dataclass(frozen=True)
class CohortConfig:
    n_subjects: int = 444
    n_regions: int = 16
    n_timepoints: int = 40
    minority_fraction: float = 0.068
    seed: int = 0
    baseline: float = 1.0
    arrival_window: tuple = (4.0, 8.0)
    arrival_spread: float = 2.0
    shape_range: tuple = (1.5, 4.0)
    rate_range: tuple = (0.8, 2.0)
    depth_range: tuple = (0.2, 0.6)
    noise_sigma: float = 0.02
    class_effect: float = 0.8
    patch_size: int = 4

    def __post_init__(self):
        validate_cohort_config(self)

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "CohortConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown cohort keys: {', '.join(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**kw)

    def with_(self, **kw) -> "CohortConfig":
        return replace(self, **kw)


def validate_cohort_config(cfg: CohortConfig) -> None:
    def bad(key, why):
        raise ConfigError(f"cohort.{key}: {why}")

    if cfg.n_subjects < 10:
        bad("n_subjects", f"must be >= 10, got {cfg.n_subjects}")
    if cfg.n_regions < 4:
        bad("n_regions", f"must be >= 4, got {cfg.n_regions}")
    if cfg.n_timepoints < 8:
        bad("n_timepoints", f"must be >= 8, got {cfg.n_timepoints}")
    if not 0.0 < cfg.minority_fraction < 1.0:
        bad("minority_fraction", f"must lie in (0, 1), got {cfg.minority_fraction}")
    if cfg.minority_fraction * cfg.n_subjects < 2:
        bad("minority_fraction", "fewer than 2 minority subjects")
    for key in ("arrival_window", "shape_range", "rate_range", "depth_range"):
        lo, hi = getattr(cfg, key)
        if lo > hi:
            bad(key, f"empty range ({lo}, {hi})")
    if cfg.shape_range[0] <= 0 or cfg.rate_range[0] <= 0:
        bad("shape_range", "gamma shape and rate must be positive")
    if cfg.noise_sigma < 0:
        bad("noise_sigma", "must be >= 0")
    if cfg.class_effect <= -1:
        bad("class_effect", "must be > -1")
    if cfg.patch_size < 1:
        bad("patch_size", "must be >= 1")


@dataclass
class LabeledVolume:
    region_series: np.ndarray      # (N, T)
    region_centroids: np.ndarray   # (N, 3)
    tumor_series: np.ndarray       # (T,)
    tumor_patch: np.ndarray        # (p, p, p, T)
    tumor_centroid: np.ndarray     # (3,)
    label: int
    subject_id: int = 0
    seed: int = 0
    # per-region (t0, shape, rate, amplitude), kept for inspection
    region_kinetics: np.ndarray = field(default=None, repr=False)

    @property
    def n_regions(self) -> int:
        return self.region_series.shape[0]

    @property
    def n_timepoints(self) -> int:
        return self.region_series.shape[1]


def gamma_variate_curve(t0: float, alpha_shape: float, beta_rate: float,
                        amplitude: float, baseline: float, T: int) -> np.ndarray:
    """Signal drop ``baseline - amplitude * s**shape * exp(-s / rate)``, ``s = t - t0``.

    Zero drop for ``t <= t0``. ``beta_rate`` acts as the time scale of the
    decay, so the deepest point sits at ``t0 + shape * rate``.
    """
    if alpha_shape <= 0 or beta_rate <= 0:
        raise DomainError(f"gamma shape and rate must be positive, got "
                          f"{alpha_shape}, {beta_rate}")
    if T < 1:
        raise DomainError(f"T must be >= 1, got {T}")
    t = np.arange(T, dtype=np.float64)
    s = np.clip(t - t0, 0.0, None)
    drop = np.where(t > t0, s ** alpha_shape * np.exp(-s / beta_rate), 0.0)
    return baseline - amplitude * drop


def _peak(shape: float, rate: float) -> float:
    m = shape * rate
    return m ** shape * np.exp(-shape)


def _subject_seeds(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def assign_labels(cfg: CohortConfig) -> np.ndarray:
    n_min = int(round(cfg.minority_fraction * cfg.n_subjects))
    rng = np.random.default_rng([cfg.seed, 1])
    labels = np.zeros(cfg.n_subjects, dtype=np.int64)
    labels[rng.choice(cfg.n_subjects, size=n_min, replace=False)] = 1
    return labels


def cohort_centroids(cfg: CohortConfig) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 2])
    return rng.uniform(0.0, 1.0, size=(cfg.n_regions, 3))


def generate_subject(cfg: CohortConfig, subject_id: int, label: int,
                     centroids: np.ndarray, seq: np.random.SeedSequence) -> LabeledVolume:
    rng = np.random.default_rng(seq)
    T, N, p = cfg.n_timepoints, cfg.n_regions, cfg.patch_size
    effect = 1.0 + cfg.class_effect if label == 1 else 1.0

    arrival = rng.uniform(*cfg.arrival_window)
    tumor_centroid = rng.uniform(0.0, 1.0, size=3)
    while np.any(np.all(np.isclose(centroids, tumor_centroid), axis=1)):
        tumor_centroid = rng.uniform(0.0, 1.0, size=3)
    dist = np.linalg.norm(centroids - tumor_centroid, axis=1)
    adjacent = np.argsort(dist, kind="stable")[:N_ADJACENT]

    kin = np.empty((N, 4))
    series = np.empty((N, T))
    for i in range(N):
        t0 = arrival + rng.uniform(-cfg.arrival_spread, cfg.arrival_spread)
        shape = rng.uniform(*cfg.shape_range)
        rate = rng.uniform(*cfg.rate_range)
        depth = rng.uniform(*cfg.depth_range)
        if i in adjacent:
            depth *= effect
        amp = depth / _peak(shape, rate)
        kin[i] = (t0, shape, rate, amp)
        series[i] = gamma_variate_curve(t0, shape, rate, amp, cfg.baseline, T)
    if cfg.noise_sigma > 0:
        series = series + rng.normal(0.0, cfg.noise_sigma, size=series.shape)

    # tumor voxels share one kinetic profile up to small voxel jitter
    t0 = arrival + rng.uniform(-cfg.arrival_spread, cfg.arrival_spread)
    shape = rng.uniform(*cfg.shape_range)
    rate = rng.uniform(*cfg.rate_range)
    depth = rng.uniform(*cfg.depth_range) * effect
    patch = np.empty((p, p, p, T))
    for idx in np.ndindex(p, p, p):
        vshape = shape * rng.uniform(0.9, 1.1)
        vamp = depth * rng.uniform(0.8, 1.2) / _peak(vshape, rate)
        patch[idx] = gamma_variate_curve(t0 + rng.uniform(-0.5, 0.5), vshape, rate,
                                         vamp, cfg.baseline, T)
    if cfg.noise_sigma > 0:
        patch = patch + rng.normal(0.0, cfg.noise_sigma, size=patch.shape)
    tumor_series = patch.reshape(-1, T).mean(axis=0)

    return LabeledVolume(
        region_series=series,
        region_centroids=centroids.copy(),
        tumor_series=tumor_series,
        tumor_patch=patch,
        tumor_centroid=tumor_centroid,
        label=int(label),
        subject_id=subject_id,
        seed=int(seq.generate_state(1)[0]),
        region_kinetics=kin,
    )


def generate_cohort(cfg: CohortConfig) -> list[LabeledVolume]:
    """Generate ``cfg.n_subjects`` volumes; identical output for identical ``cfg``."""
    validate_cohort_config(cfg)
    labels = assign_labels(cfg)
    centroids = cohort_centroids(cfg)
    seqs = _subject_seeds(cfg.seed, cfg.n_subjects)
    return [generate_subject(cfg, i, labels[i], centroids, seqs[i])
            for i in range(cfg.n_subjects)]
