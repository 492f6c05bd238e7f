"""Confusion-matrix metrics, ROC points and trapezoidal AUC.

The positive class is label 1 (the minority / mutant class). A score at or
above the decision threshold is predicted positive.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, UndefinedMetricError


@dataclass
class MetricsReport:
    tp: int
    fp: int
    tn: int
    fn: int
    acc: float
    balanced_acc: float
    spec: float
    sens: float
    f1: float
    roc_points: list = field(default_factory=list)
    auc: float | None = None
    threshold: float = 0.5

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def table_row(self) -> dict:
        """The six headline metrics in percent; AUC is ``None`` when undefined."""
        pct = lambda v: None if v is None else round(100.0 * v, 1)
        return {"ACC": pct(self.acc), "B-ACC": pct(self.balanced_acc), "SPEC": pct(self.spec),
                "SENS": pct(self.sens), "F1": pct(self.f1), "AUC": pct(self.auc)}

    def to_record(self) -> dict:
        d = asdict(self)
        d["roc_points"] = [list(p) for p in self.roc_points]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def confusion_metrics(tp: int, fp: int, tn: int, fn: int) -> dict:
    """Rates from raw counts; an empty denominator gives 0."""
    sens = _ratio(tp, tp + fn)
    spec = _ratio(tn, tn + fp)
    return {
        "acc": _ratio(tp + tn, tp + fp + tn + fn),
        "sens": sens,
        "spec": spec,
        "balanced_acc": (sens + spec) / 2.0,
        "f1": _ratio(2 * tp, 2 * tp + fp + fn),
    }


def roc_curve(labels, scores) -> list[tuple[float, float]]:
    """ROC points swept over midpoints between distinct scores plus both infinities.

    Points come out ordered by decreasing threshold, so both coordinates are
    non-decreasing.
    """
    y = np.asarray(labels).astype(int)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC needs both classes present")
    distinct = np.unique(s)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    thresholds = np.concatenate([[np.inf], mids[::-1], [-np.inf]])
    pts = []
    for thr in thresholds:
        pred = s >= thr
        tpr = float((pred & (y == 1)).sum()) / n_pos
        fpr = float((pred & (y == 0)).sum()) / n_neg
        pts.append((fpr, tpr))
    return pts


def auc_from_points(points) -> float:
    pts = np.asarray(points, dtype=np.float64)
    return float(np.trapezoid(pts[:, 1], pts[:, 0]))


def roc_auc(labels, scores) -> float:
    return auc_from_points(roc_curve(labels, scores))


def compute_metrics(labels, scores, threshold: float = 0.5) -> MetricsReport:
    """Confusion counts at ``threshold`` plus ROC/AUC over all thresholds.

    With a single class present the AUC is left as ``None`` and
    ``roc_points`` is empty; the other fields are still filled in.
    """
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise DimensionError(f"labels {y.shape} and scores {s.shape} must be equal-length 1-D")
    if np.any((s < 0) | (s > 1)) or not np.all(np.isfinite(s)):
        raise DomainError("scores must be probabilities in [0, 1]")
    if not np.all((y == 0) | (y == 1)):
        raise DomainError("labels must be 0 or 1")
    y = y.astype(int)
    pred = s >= threshold
    tp = int((pred & (y == 1)).sum())
    fp = int((pred & (y == 0)).sum())
    tn = int((~pred & (y == 0)).sum())
    fn = int((~pred & (y == 1)).sum())
    try:
        pts = roc_curve(y, s)
        auc = auc_from_points(pts)
    except UndefinedMetricError:
        pts, auc = [], None
    return MetricsReport(tp=tp, fp=fp, tn=tn, fn=fn, roc_points=pts, auc=auc,
                         threshold=threshold, **confusion_metrics(tp, fp, tn, fn))


def roc_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fpr", "tpr"])
    for fpr, tpr in points:
        w.writerow([repr(float(fpr)), repr(float(tpr))])
    return buf.getvalue()
