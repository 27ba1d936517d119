"""Confusion counts, point rates, ROC/AUC and the evaluation report."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence

import numpy as np

from agcnn.attention.groundtruth import pearson_cc
from agcnn.core.functional import sigmoid_array
from agcnn.errors import InputError, UndefinedCorrelationError, UndefinedRateError

# column order of the report row
REPORT_COLUMNS = ("accuracy", "sensitivity", "specificity", "auc", "f2",
                  "attention_cc_mean", "attention_cc_var")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise InputError(f"confusion counts must be non-negative: {self}")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def _scores_labels(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.size == 0:
        raise InputError("no samples to evaluate")
    if s.size != y.size:
        raise InputError(f"{s.size} scores but {y.size} labels")
    if not np.all((y == 0) | (y == 1)):
        raise InputError("labels must be 0 or 1")
    if not np.all(np.isfinite(s)):
        raise InputError("scores must be finite")
    return s, y.astype(np.int64)


def confusion(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    """Tally predictions; a sample is called positive iff sigmoid(score) > threshold."""
    s, y = _scores_labels(scores, labels)
    pred = sigmoid_array(s) > threshold
    pos = y == 1
    return ConfusionCounts(tp=int(np.sum(pred & pos)), tn=int(np.sum(~pred & ~pos)),
                           fp=int(np.sum(pred & ~pos)), fn=int(np.sum(~pred & pos)))


def sensitivity(c: ConfusionCounts) -> float:
    if c.tp + c.fn == 0:
        raise UndefinedRateError("sensitivity is undefined without positive samples")
    return c.tp / (c.tp + c.fn)


def specificity(c: ConfusionCounts) -> float:
    if c.tn + c.fp == 0:
        raise UndefinedRateError("specificity is undefined without negative samples")
    return c.tn / (c.tn + c.fp)


def f_beta(c: ConfusionCounts, beta: float = 2.0) -> float:
    b2 = beta * beta
    den = (1 + b2) * c.tp + b2 * c.fn + c.fp
    if den == 0:
        raise UndefinedRateError("F-beta is undefined when TP, FN and FP are all zero")
    return (1 + b2) * c.tp / den


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise UndefinedRateError("accuracy is undefined on zero samples")
    return (c.tp + c.tn) / c.total


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # thresholds[k] produced point k; the first is +inf

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fpr", "tpr"])
        for f, t in zip(self.fpr, self.tpr):
            w.writerow([repr(float(f)), repr(float(t))])
        return buf.getvalue()


def roc_curve(scores, labels) -> RocCurve:
    """Sweep the threshold over the distinct scores, highest first.

    Tied scores move together, giving a diagonal segment that the
    trapezoid rule credits by half.
    """
    s, y = _scores_labels(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedRateError("ROC needs both positive and negative samples")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last_of_run = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(y)[last_of_run]
    fp = np.cumsum(1 - y)[last_of_run]
    tpr = np.r_[0, tp] / n_pos
    fpr = np.r_[0, fp] / n_neg
    return RocCurve(fpr=fpr, tpr=tpr, thresholds=np.r_[np.inf, s[last_of_run]])


def auc_trapezoid(curve: RocCurve) -> float:
    f, t = curve.fpr, curve.tpr
    return float(np.sum(np.diff(f) * (t[1:] + t[:-1]) / 2))


def roc_auc(scores, labels):
    curve = roc_curve(scores, labels)
    return curve, auc_trapezoid(curve)


@dataclass
class EvalReport:
    accuracy: float
    sensitivity: float
    specificity: float
    auc: float
    f2: float
    attention_cc_mean: Optional[float] = None
    attention_cc_var: Optional[float] = None
    n: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerow(["" if getattr(self, k) is None else repr(float(getattr(self, k)))
                    for k in REPORT_COLUMNS])
        return buf.getvalue()

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def cc_summary(ccs: Sequence[float]):
    """Mean and population variance of per-image correlation coefficients."""
    if len(ccs) == 0:
        return None, None
    a = np.asarray(ccs, dtype=np.float64)
    return float(a.mean()), float(np.mean((a - a.mean()) ** 2))


def attention_ccs(predicted, truth) -> List[float]:
    """Per-image CC, skipping images whose maps are constant (CC undefined)."""
    out = []
    for p, t in zip(predicted, truth):
        if t is None:
            continue
        try:
            out.append(pearson_cc(p, t))
        except UndefinedCorrelationError:
            continue
    return out


def report_from_scores(scores, labels, threshold: float = 0.5,
                       attention_pred=None, attention_true=None) -> EvalReport:
    c = confusion(scores, labels, threshold)
    _, auc = roc_auc(scores, labels)
    mean = var = None
    if attention_pred is not None and attention_true is not None:
        mean, var = cc_summary(attention_ccs(attention_pred, attention_true))
    return EvalReport(accuracy=accuracy(c), sensitivity=sensitivity(c),
                      specificity=specificity(c), auc=auc, f2=f_beta(c, 2.0),
                      attention_cc_mean=mean, attention_cc_var=var, n=c.total)


def predict(model, images, batch_size: int = 16):
    """Classification logits and predicted attention maps in inference mode."""
    was_training = model.training
    model.eval()
    logits, maps = [], []
    try:
        for i in range(0, len(images), batch_size):
            out = model.forward(images[i:i + batch_size])
            logits.append(out.cls_logit.data.copy())
            if out.attention is not None:
                maps.append(out.attention.data[:, 0].copy())
    finally:
        model.train(was_training)
    return np.concatenate(logits), (np.concatenate(maps) if maps else None)


def evaluate(model, split, threshold: float = 0.5) -> EvalReport:
    """Run the model over a data split and build the full report."""
    if len(split) == 0:
        raise InputError("cannot evaluate an empty split")
    logits, maps = predict(model, split.images)
    truth = split.attention if maps is not None else None
    return report_from_scores(logits, split.labels, threshold, maps, truth)
