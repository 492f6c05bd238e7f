import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from perfgat.errors import DomainError, UndefinedMetricError
from perfgat.metrics import auc_from_points, compute_metrics, confusion_metrics, roc_auc, roc_csv, roc_curve

from oracles import confusion_oracle

# (tp, fp, tn, fn) -> frozen (sens, spec, b-acc, f1, acc), computed by hand
MATRICES = [
    ((5, 2, 8, 1), (5 / 6, 0.8, (5 / 6 + 0.8) / 2, 10 / 13, 13 / 16)),
    ((10, 0, 10, 0), (1.0, 1.0, 1.0, 1.0, 1.0)),
    ((0, 0, 10, 3), (0.0, 1.0, 0.5, 0.0, 10 / 13)),
    ((3, 10, 0, 0), (1.0, 0.0, 0.5, 6 / 16, 3 / 13)),
    ((1, 1, 1, 1), (0.5, 0.5, 0.5, 0.5, 0.5)),
    ((2, 3, 37, 4), (1 / 3, 37 / 40, (1 / 3 + 37 / 40) / 2, 4 / 11, 39 / 46)),
    ((7, 5, 81, 0), (1.0, 81 / 86, (1 + 81 / 86) / 2, 14 / 19, 88 / 93)),
    ((0, 4, 6, 2), (0.0, 0.6, 0.3, 0.0, 0.5)),
    ((9, 1, 0, 0), (1.0, 0.0, 0.5, 18 / 19, 0.9)),
    ((4, 6, 20, 6), (0.4, 20 / 26, (0.4 + 20 / 26) / 2, 8 / 20, 24 / 36)),
]


def scores_for(tp, fp, tn, fn):
    labels = [1] * tp + [0] * fp + [0] * tn + [1] * fn
    scores = [0.9] * (tp + fp) + [0.1] * (tn + fn)
    return labels, scores


@pytest.mark.parametrize("counts,expected", MATRICES)
def test_confusion_matrices(counts, expected):
    r = compute_metrics(*scores_for(*counts))
    assert (r.tp, r.fp, r.tn, r.fn) == counts
    sens, spec, bacc, f1, acc = expected
    for got, want in zip((r.sens, r.spec, r.balanced_acc, r.f1, r.acc), expected):
        assert got == pytest.approx(want, abs=1e-12)
    assert r.balanced_acc == (r.sens + r.spec) / 2


def test_headline_example_rounded():
    r = compute_metrics(*scores_for(5, 2, 8, 1))
    assert round(r.sens, 4) == 0.8333 and round(r.spec, 4) == 0.8
    assert round(r.balanced_acc, 4) == 0.8167 and round(r.f1, 4) == 0.7692


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_confusion_matches_oracle(tp, fp, tn, fn):
    if tp + fp + tn + fn == 0:
        return
    got = confusion_metrics(tp, fp, tn, fn)
    for k, v in confusion_oracle(tp, fp, tn, fn).items():
        assert got[k] == pytest.approx(v, abs=1e-15)
    assert got["balanced_acc"] == (got["sens"] + got["spec"]) / 2


def test_perfect_and_degenerate_scores():
    y = [0, 0, 1, 1, 0, 1]
    r = compute_metrics(y, [0.1, 0.2, 0.8, 0.9, 0.3, 0.7])
    assert r.auc == 1.0 and r.acc == r.balanced_acc == r.f1 == 1.0
    assert compute_metrics(y, [0.5] * 6).auc == 0.5


def test_single_class_auc_undefined():
    r = compute_metrics([0, 0, 0], [0.2, 0.6, 0.1])
    assert r.auc is None and r.roc_points == []
    assert r.fp == 1 and r.spec == pytest.approx(2 / 3)
    with pytest.raises(UndefinedMetricError):
        roc_curve([1, 1], [0.1, 0.2])


def test_roc_points_thresholds():
    pts = roc_curve([0, 1, 0, 1], [0.1, 0.4, 0.35, 0.8])
    assert pts == [(0.0, 0.0), (0.0, 0.5), (0.0, 1.0), (0.5, 1.0), (1.0, 1.0)]
    assert auc_from_points(pts) == 1.0


@given(st.integers(0, 10_000), st.sampled_from(["exp", "cube", "affine"]))
def test_auc_invariant_under_monotone_transform(seed, kind):
    r = np.random.default_rng(seed)
    y = np.r_[0, 1, r.integers(0, 2, size=20)]
    s = r.uniform(size=22)
    f = {"exp": np.exp, "cube": lambda v: v ** 3, "affine": lambda v: 3 * v - 7}[kind]
    assert roc_auc(y, f(s)) == pytest.approx(roc_auc(y, s), abs=1e-12)


@given(st.integers(0, 10_000))
def test_roc_monotone(seed):
    r = np.random.default_rng(seed)
    y = np.r_[0, 1, r.integers(0, 2, size=15)]
    pts = np.array(roc_curve(y, np.round(r.uniform(size=17), 1)))
    assert np.all(np.diff(pts[:, 0]) >= 0) and np.all(np.diff(pts[:, 1]) >= 0)
    assert tuple(pts[0]) == (0.0, 0.0) and tuple(pts[-1]) == (1.0, 1.0)


def test_input_validation():
    with pytest.raises(DomainError):
        compute_metrics([0, 1], [0.2, 1.2])
    with pytest.raises(DomainError):
        compute_metrics([0, 2], [0.2, 0.3])


def test_roc_csv_and_report_serialization():
    r = compute_metrics([0, 1, 1], [0.2, 0.6, 0.9])
    text = roc_csv(r.roc_points)
    assert text.splitlines()[0] == "fpr,tpr"
    assert len(text.splitlines()) == len(r.roc_points) + 1
    row = r.table_row()
    assert set(row) == {"ACC", "B-ACC", "SPEC", "SENS", "F1", "AUC"} and row["AUC"] == 100.0
    assert '"auc": 1.0' in r.to_json()
