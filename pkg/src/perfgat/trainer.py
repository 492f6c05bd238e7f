"""Training, class-balanced retraining and evaluation.

Main training fits every parameter group with unweighted cross-entropy and
early stopping on validation loss. Retraining then freezes the three
encoders, caches per-sample features, tops the minority class up to the
majority count by recombining tumor and graph features across minority
pairs, and fits freshly initialised fusion and classifier weights on the
balanced set.

Shuffle order for epoch ``e`` comes from ``default_rng([seed, stage, e])``,
so a run resumed from a saved :class:`TrainState` replays exactly.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from . import numcore as nc
from .errors import (
    AugmentationError,
    ConfigError,
    ContractError,
    DivergenceError,
    NumericError,
    StratificationError,
)
from .fusion import FusionParams, SampleFeatures, fused_embedding, pool
from .metrics import MetricsReport, compute_metrics
from .model import (
    ENCODER_GROUPS,
    ModelConfig,
    Sample,
    buffer_names,
    collate,
    extract_features,
    forward,
    forward_features,
    group_of,
    init_fusion_params,
    init_params,
    pooled_embedding,
    refresh_head_buffers,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 200
    early_stop_patience: int = 10
    retrain_epochs: int = 20
    batch_size: int = 10
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    split: tuple = (0.7, 0.1, 0.2)
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        def bad(key, why):
            raise ConfigError(f"train.{key}: {why}")

        for key in ("max_epochs", "early_stop_patience", "retrain_epochs", "batch_size"):
            if getattr(self, key) < 1:
                bad(key, "must be >= 1")
        if self.learning_rate < 0:
            bad("learning_rate", "must be >= 0")
        if len(self.split) != 3 or any(r < 0 for r in self.split):
            bad("split", "needs three non-negative ratios")
        if abs(sum(self.split) - 1.0) > 1e-9:
            bad("split", f"ratios must sum to 1, got {sum(self.split)}")
        if not 0.0 <= self.threshold <= 1.0:
            bad("threshold", "must lie in [0, 1]")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["split"] = list(self.split)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown train keys: {', '.join(unknown)}")
        d = dict(d)
        if "split" in d:
            d["split"] = tuple(d["split"])
        return cls(**d)

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, state: AdamState | None = None):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = state if state is not None else AdamState()

    def update(self, params: dict, grads: Mapping[str, np.ndarray]) -> dict:
        """Return new parameters; names missing from ``grads`` are left as they are."""
        st = self.state
        st.step += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** st.step
        c2 = 1.0 - b2 ** st.step
        out = dict(params)
        for name in sorted(grads):
            g = grads[name]
            m = st.m.get(name, np.zeros_like(g))
            v = st.v.get(name, np.zeros_like(g))
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            st.m[name], st.v[name] = m, v
            out[name] = params[name] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return out


# ---------------------------------------------------------------------------
# generic loop


@dataclass
class TrainState:
    params: dict
    best_params: dict
    opt: AdamState = field(default_factory=AdamState)
    epoch: int = 0
    best_val: float = float("inf")
    best_epoch: int = 0
    bad_epochs: int = 0
    stopped: bool = False
    history: list = field(default_factory=list)


@dataclass
class TrainResult:
    params: dict
    history: list
    state: TrainState

    @property
    def best_epoch(self) -> int:
        return self.state.best_epoch


BatchLoss = Callable[[Mapping[str, nc.Tensor], Sequence], nc.Tensor]


def _run_epoch(state: TrainState, items: Sequence, loss_fn: BatchLoss, trainable: Sequence[str],
               opt: Adam, cfg: TrainConfig, stage: int) -> float:
    epoch = state.epoch + 1
    order = np.random.default_rng([cfg.seed, stage, epoch]).permutation(len(items))
    total, count = 0.0, 0
    for b, start in enumerate(range(0, len(items), cfg.batch_size)):
        chunk = [items[i] for i in order[start:start + cfg.batch_size]]
        tape = nc.GradTape()
        watched = {k: (tape.watch(k, v) if k in trainable else nc.Tensor(v))
                   for k, v in state.params.items()}
        try:
            loss = loss_fn(watched, chunk)
            grads = nc.backward(tape, loss)
        except NumericError as exc:
            raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}: {exc}",
                                  epoch=epoch, batch=b) from exc
        value = float(loss)
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}",
                                  epoch=epoch, batch=b)
        state.params = opt.update(state.params, grads)
        total += value * len(chunk)
        count += len(chunk)
    return total / count


def _eval_loss(params: Mapping, items: Sequence, loss_fn: BatchLoss, batch_size: int) -> float:
    consts = {k: nc.Tensor(v) for k, v in params.items()}
    total = 0.0
    for start in range(0, len(items), batch_size):
        chunk = items[start:start + batch_size]
        total += float(loss_fn(consts, chunk)) * len(chunk)
    return total / len(items)


def fit(params: Mapping, train_items: Sequence, loss_fn: BatchLoss, cfg: TrainConfig,
        epochs: int, val_items: Sequence | None = None, trainable: Sequence[str] | None = None,
        state: TrainState | None = None, stage: int = 0,
        on_epoch: Callable[[dict], None] | None = None, until_epoch: int | None = None,
        before_epoch: Callable[[dict], dict] | None = None) -> TrainResult:
    """Adam over ``train_items`` for up to ``epochs`` epochs.

    With ``val_items`` the loop stops once validation loss has not improved
    for ``cfg.early_stop_patience`` epochs and returns the best-validation
    parameters; without it the final parameters are returned.
    ``until_epoch`` pauses early so the returned ``state`` can be resumed.
    ``before_epoch`` maps the current parameters to refreshed ones (used for
    non-trained buffers) at the start of every epoch.
    """
    if not train_items:
        raise ContractError("empty training set")
    if val_items is not None and not val_items:
        raise ContractError("empty validation set")
    if state is None:
        p = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
        state = TrainState(params=p, best_params=copy.deepcopy(p))
    trainable = set(state.params) if trainable is None else set(trainable)
    trainable -= set(buffer_names())
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, state.opt)
    stop_at = epochs if until_epoch is None else min(epochs, until_epoch)
    while not state.stopped and state.epoch < stop_at:
        if before_epoch is not None:
            state.params = before_epoch(state.params)
        train_loss = _run_epoch(state, train_items, loss_fn, sorted(trainable), opt, cfg, stage)
        state.epoch += 1
        record = {"stage": stage, "epoch": state.epoch, "train_loss": train_loss}
        if val_items is not None:
            val_loss = _eval_loss(state.params, val_items, loss_fn, cfg.batch_size)
            record["val_loss"] = val_loss
            if val_loss < state.best_val:
                state.best_val, state.best_epoch, state.bad_epochs = val_loss, state.epoch, 0
                state.best_params = copy.deepcopy(state.params)
            else:
                state.bad_epochs += 1
                if state.bad_epochs >= cfg.early_stop_patience:
                    state.stopped = True
        else:
            state.best_params, state.best_epoch = state.params, state.epoch
        if state.epoch >= epochs:
            state.stopped = True
        state.history.append(record)
        log.debug("%s", record)
        if on_epoch is not None:
            on_epoch(record)
    final = state.best_params if val_items is not None else state.params
    return TrainResult(params=copy.deepcopy(final), history=list(state.history), state=state)


# ---------------------------------------------------------------------------
# pipeline stages


def split_dataset(items: Sequence, ratios=(0.7, 0.1, 0.2), seed: int = 0,
                  labels: Sequence[int] | None = None) -> tuple[list, list, list]:
    """Stratified train/val/test partition.

    Each class is shuffled and cut by ``ratios``; when a class has at least
    three members, validation and test each keep at least one of them.
    """
    if len(items) < 10:
        raise StratificationError(f"need at least 10 samples to split, got {len(items)}")
    if labels is None:
        labels = [int(getattr(it, "label")) for it in items]
    labels = np.asarray(labels)
    n_min = min(int((labels == c).sum()) for c in np.unique(labels))
    if len(np.unique(labels)) < 2 or n_min < 3:
        raise StratificationError(f"minority class has {n_min if len(np.unique(labels)) > 1 else 0}"
                                  " samples; at least 3 are needed")
    rng = np.random.default_rng([seed, 7])
    parts = ([], [], [])
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        n = idx.size
        n_val = max(1, int(round(ratios[1] * n)))
        n_test = max(1, int(round(ratios[2] * n)))
        n_train = n - n_val - n_test
        cuts = (idx[:n_train], idx[n_train:n_train + n_val], idx[n_train + n_val:])
        for part, sel in zip(parts, cuts):
            part.extend(sel.tolist())
    return tuple([items[i] for i in sorted(part)] for part in parts)


def _sample_loss(model_cfg: ModelConfig) -> BatchLoss:
    def loss_fn(params, chunk):
        batch = collate(chunk)
        return nc.cross_entropy(forward(params, batch, model_cfg), batch.labels)
    return loss_fn


def _feature_loss(model_cfg: ModelConfig) -> BatchLoss:
    def loss_fn(params, chunk):
        u = np.stack([f.u_I for f in chunk])
        zs = np.stack([f.z_spatial for f in chunk])
        zt = np.stack([f.z_temporal for f in chunk])
        labels = np.array([f.label for f in chunk])
        return nc.cross_entropy(forward_features(params, u, zs, zt, model_cfg), labels)
    return loss_fn


def _sample_buffers(samples: Sequence[Sample], model_cfg: ModelConfig,
                    batch_size: int = 32) -> Callable[[dict], dict]:
    def refresh(params):
        consts = {k: nc.Tensor(v) for k, v in params.items()}
        pooled = [pooled_embedding(consts, collate(samples[i:i + batch_size]), model_cfg).data
                  for i in range(0, len(samples), batch_size)]
        return refresh_head_buffers(params, np.concatenate(pooled))
    return refresh


def _feature_buffers(features: Sequence[SampleFeatures],
                     model_cfg: ModelConfig) -> Callable[[dict], dict]:
    u = np.stack([f.u_I for f in features])
    zs = np.stack([f.z_spatial for f in features])
    zt = np.stack([f.z_temporal for f in features])

    def refresh(params):
        z = fused_embedding(zs, zt, u, FusionParams.from_mapping(params), model_cfg.node_attention)
        return refresh_head_buffers(params, pool(z).data)
    return refresh


def train(params: Mapping, train_set: Sequence[Sample], val_set: Sequence[Sample],
          model_cfg: ModelConfig, cfg: TrainConfig, state: TrainState | None = None,
          on_epoch: Callable[[dict], None] | None = None,
          until_epoch: int | None = None) -> TrainResult:
    """Main training stage with early stopping on validation loss."""
    return fit(params, train_set, _sample_loss(model_cfg), cfg, cfg.max_epochs,
               val_items=val_set, state=state, stage=0, on_epoch=on_epoch,
               until_epoch=until_epoch, before_epoch=_sample_buffers(train_set, model_cfg))


def recombine_augment(minority: Sequence[SampleFeatures], target_count: int,
                      seed: int = 0) -> list[SampleFeatures]:
    """Synthesize ``target_count`` minority samples by swapping feature halves.

    A random ordered pair ``(h, h')`` of distinct samples yields
    ``(u_I, z') `` and ``(u_I', z)``, where ``z`` is the graph pair
    ``(z_spatial, z_temporal)``. Arrays are shared, not copied.
    """
    if len(minority) < 2:
        raise AugmentationError(f"need at least 2 minority samples, got {len(minority)}")
    if target_count < 0:
        raise AugmentationError("target_count must be >= 0")
    rng = np.random.default_rng([seed, 11])
    label = minority[0].label
    out: list[SampleFeatures] = []
    while len(out) < target_count:
        i, j = rng.choice(len(minority), size=2, replace=False)
        a, b = minority[i], minority[j]
        out.append(SampleFeatures(a.u_I, b.z_spatial, b.z_temporal, label))
        if len(out) < target_count:
            out.append(SampleFeatures(b.u_I, a.z_spatial, a.z_temporal, label))
    return out


def balance_features(features: Sequence[SampleFeatures], seed: int = 0
                     ) -> tuple[list[SampleFeatures], int]:
    """Top up the smaller class with recombined samples; returns (balanced set, n_added)."""
    labels = np.array([f.label for f in features])
    counts = {c: int((labels == c).sum()) for c in (0, 1)}
    minority_label = min(counts, key=lambda c: (counts[c], -c))
    minority = [f for f in features if f.label == minority_label]
    need = abs(counts[1] - counts[0])
    synth = recombine_augment(minority, need, seed) if need else []
    return list(features) + synth, need


@dataclass
class RetrainResult:
    params: dict
    n_synthetic: int
    history: list


def retrain_classifier(params: Mapping, train_set: Sequence[Sample], model_cfg: ModelConfig,
                       cfg: TrainConfig) -> RetrainResult:
    """Freeze encoders, balance cached features, refit fusion and classifier."""
    feats = extract_features(params, train_set, model_cfg)
    balanced, n_syn = balance_features(feats, cfg.seed)
    start = {k: np.array(v) for k, v in params.items()}
    start.update(init_fusion_params(model_cfg, cfg.seed, stage=1))
    trainable = [k for k in start if group_of(k) not in ENCODER_GROUPS]
    res = fit(start, balanced, _feature_loss(model_cfg), cfg, cfg.retrain_epochs,
              trainable=trainable, stage=1,
              before_epoch=_feature_buffers(balanced, model_cfg))
    out = dict(res.params)
    for k, v in params.items():
        if group_of(k) in ENCODER_GROUPS:
            out[k] = v
    return RetrainResult(params=out, n_synthetic=n_syn, history=res.history)


def predict_proba(params: Mapping, samples: Sequence[Sample], model_cfg: ModelConfig,
                  batch_size: int = 32) -> np.ndarray:
    """Probability of the positive (minority) class for each sample."""
    consts = {k: nc.Tensor(v) for k, v in params.items()}
    out = []
    for start in range(0, len(samples), batch_size):
        logits = forward(consts, collate(samples[start:start + batch_size]), model_cfg)
        out.append(nc.softmax(logits, axis=-1).data[:, 1])
    return np.concatenate(out)


def evaluate(params: Mapping, samples: Sequence[Sample], model_cfg: ModelConfig,
             threshold: float = 0.5) -> MetricsReport:
    scores = predict_proba(params, samples, model_cfg)
    return compute_metrics([s.label for s in samples], scores, threshold)


@dataclass
class PipelineResult:
    trained: TrainResult
    retrained: RetrainResult | None
    report: MetricsReport
    report_before_retrain: MetricsReport


def run_pipeline(samples: Sequence[Sample], model_cfg: ModelConfig, cfg: TrainConfig,
                 retrain: bool = True) -> PipelineResult:
    """split -> train -> retrain -> evaluate on the held-out test split."""
    train_set, val_set, test_set = split_dataset(samples, cfg.split, cfg.seed)
    g = train_set[0].graph
    params = init_params(model_cfg, g.x.shape[1], train_set[0].patch.shape[0], cfg.seed)
    trained = train(params, train_set, val_set, model_cfg, cfg)
    before = evaluate(trained.params, test_set, model_cfg, cfg.threshold)
    rt = None
    final = before
    if retrain:
        rt = retrain_classifier(trained.params, train_set, model_cfg, cfg)
        final = evaluate(rt.params, test_set, model_cfg, cfg.threshold)
    return PipelineResult(trained, rt, final, before)
