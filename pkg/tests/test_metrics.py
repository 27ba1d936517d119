import csv
import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from agcnn.errors import InputError, UndefinedRateError
from agcnn.metrics import (ConfusionCounts, EvalReport, accuracy, cc_summary, confusion, f_beta,
                           report_from_scores, roc_auc, roc_curve, sensitivity, specificity)


def pairwise_auc(scores, labels):
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    pos, neg = s[y == 1], s[y == 0]
    wins = 0.0
    for p in pos:
        wins += np.sum(p > neg) + 0.5 * np.sum(p == neg)
    return wins / (len(pos) * len(neg))


# confusion and rates -------------------------------------------------------------

def test_confusion_all_positive():
    c = confusion([10.0] * 5, [1] * 5)
    assert c == ConfusionCounts(5, 0, 0, 0)


def test_confusion_threshold_one_predicts_negative():
    c = confusion([50.0, -3.0, 700.0], [1, 0, 1], threshold=1.0)
    assert c.tp == 0 and c.fp == 0 and c.fn == 2 and c.tn == 1


def test_confusion_hand_tally():
    # sigmoid(0.3)>0.5 TP, sigmoid(-0.2)<0.5 FN, sigmoid(1.5) FP, sigmoid(0) = 0.5 not > 0.5 -> TN
    c = confusion([0.3, -0.2, 1.5, 0.0], [1, 1, 0, 0])
    assert (c.tp, c.fn, c.fp, c.tn) == (1, 1, 1, 1)


def test_confusion_errors():
    with pytest.raises(InputError):
        confusion([], [])
    with pytest.raises(InputError):
        confusion([0.1, 0.2], [1])
    with pytest.raises(InputError):
        confusion([0.1], [2])


def test_rate_examples():
    assert sensitivity(ConfusionCounts(95, 0, 0, 5)) == 0.95
    assert specificity(ConfusionCounts(0, 0, 10, 0)) == 0.0
    with pytest.raises(UndefinedRateError):
        sensitivity(ConfusionCounts(0, 3, 2, 0))
    with pytest.raises(UndefinedRateError):
        specificity(ConfusionCounts(3, 0, 0, 2))
    with pytest.raises(UndefinedRateError):
        f_beta(ConfusionCounts(0, 7, 0, 0))


def test_f_beta_examples():
    assert f_beta(ConfusionCounts(12, 3, 0, 0)) == 1.0
    assert math.isclose(f_beta(ConfusionCounts(8, 0, 2, 2), beta=1.0), 0.8, rel_tol=1e-15)


def test_f2_reconstructed_from_published_rates():
    n_pos, n_neg = 2392, 3432
    tp = round(0.954 * n_pos)
    fn = n_pos - tp
    tn = round(0.952 * n_neg)
    fp = n_neg - tn
    f2 = f_beta(ConfusionCounts(tp, tn, fp, fn), 2.0)
    assert (tp, fn, fp) == (2282, 110, 165)
    assert abs(f2 - 0.951) <= 0.005


@settings(max_examples=100, deadline=None)
@given(tp=st.integers(1, 500), fn=st.integers(0, 500), fp=st.integers(0, 500),
       beta=st.floats(0.25, 4))
def test_f_beta_monotone(tp, fn, fp, beta):
    base = f_beta(ConfusionCounts(tp, 0, fp, fn), beta)
    more_tp = f_beta(ConfusionCounts(tp + 1, 0, fp, fn), beta)
    if fn + fp > 0:
        assert more_tp > base
    else:
        assert more_tp == base == 1.0  # already perfect
    assert f_beta(ConfusionCounts(tp, 0, fp, fn + 1), beta) < base
    assert f_beta(ConfusionCounts(tp, 0, fp + 1, fn), beta) < base


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(-10, 10), st.integers(0, 1)), min_size=1, max_size=50))
def test_accuracy_identity(pairs):
    s, y = zip(*pairs)
    c = confusion(s, y)
    assert c.total == len(pairs)
    assert accuracy(c) == (c.tp + c.tn) / c.total


# ROC -----------------------------------------------------------------------------

def test_auc_examples():
    s = [0.1, 0.4, 0.35, 0.8]
    assert roc_auc(s, [0, 0, 1, 1])[1] == 0.75
    assert roc_auc([1, 2, 3, 4], [0, 0, 1, 1])[1] == 1.0
    assert roc_auc([1, 2, 3, 4], [1, 1, 0, 0])[1] == 0.0
    assert roc_auc([5, 5, 5, 5], [1, 0, 1, 0])[1] == 0.5
    with pytest.raises(UndefinedRateError):
        roc_auc([1, 2], [1, 1])


def test_roc_curve_shape(rng):
    s = rng.normal(size=40)
    y = rng.integers(0, 2, size=40)
    y[:2] = [0, 1]
    c = roc_curve(s, y)
    assert (c.fpr[0], c.tpr[0]) == (0.0, 0.0) and (c.fpr[-1], c.tpr[-1]) == (1.0, 1.0)
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)
    assert np.all(np.diff(c.thresholds) < 0)
    rows = list(csv.reader(io.StringIO(c.to_csv())))
    assert rows[0] == ["fpr", "tpr"] and len(rows) == len(c.fpr) + 1


def test_trapezoid_equals_pairwise_on_random_sets():
    r = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        n = int(r.integers(2, 1001))
        # coarse rounding produces plenty of ties
        s = np.round(r.normal(size=n), int(r.integers(0, 3)))
        y = r.integers(0, 2, size=n)
        y[0], y[1] = 0, 1
        worst = max(worst, abs(roc_auc(s, y)[1] - pairwise_auc(s, y)))
    assert worst <= 1e-12


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**20))
def test_auc_invariant_under_increasing_transform(seed):
    r = np.random.default_rng(seed)
    s = np.round(r.normal(size=30), 1)
    y = r.integers(0, 2, size=30)
    y[:2] = [0, 1]
    assert roc_auc(s, y)[1] == roc_auc(np.exp(s) * 3 + 1, y)[1]


# report --------------------------------------------------------------------------

def test_report_oracle_scores():
    y = np.array([1, 0, 1, 0, 0, 1])
    rep = report_from_scores(np.where(y == 1, 5.0, -5.0), y)
    assert rep.accuracy == 1.0 and rep.auc == 1.0 and rep.f2 == 1.0
    for v in (rep.accuracy, rep.sensitivity, rep.specificity, rep.auc, rep.f2):
        assert 0.0 <= v <= 1.0


def test_cc_population_variance():
    mean, var = cc_summary([0.9, 0.8, 0.4])
    assert math.isclose(mean, 0.7, rel_tol=1e-14)
    # ((0.2)^2 + (0.1)^2 + (0.3)^2) / 3
    assert math.isclose(var, 0.14 / 3, rel_tol=1e-12)
    assert cc_summary([]) == (None, None)


def test_report_serialization():
    maps = np.random.default_rng(0).uniform(size=(4, 5, 5))
    rep = report_from_scores([1.0, -1.0, 2.0, -2.0], [1, 0, 1, 0],
                             attention_pred=maps, attention_true=maps[::-1])
    back = EvalReport.from_json(rep.to_json())
    assert back == rep
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0][:5] == ["accuracy", "sensitivity", "specificity", "auc", "f2"]
    assert len(rows) == 2 and float(rows[1][0]) == rep.accuracy
    assert json.loads(rep.to_json())["attention_cc_mean"] == rep.attention_cc_mean
