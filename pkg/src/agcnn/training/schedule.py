"""Two-phase training loop."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional

import numpy as np

from agcnn.core.tensor import grad
from agcnn.data import Dataset, Split
from agcnn.errors import ConfigError, InputError, NonFiniteLossError, UndefinedRateError
from agcnn.metrics import accuracy, attention_ccs, cc_summary, confusion, predict, roc_auc
from agcnn.training.adam import AdamState, adam_step
from agcnn.training.losses import (PHASE1, PHASE2, LossWeights, loss_attention,
                                   loss_classification, total_loss)

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "phase", "loss_a", "loss_f", "loss_c", "total",
               "val_accuracy", "val_auc", "val_attention_cc")


@dataclass(frozen=True)
class TrainSchedule:
    phase1: LossWeights = PHASE1
    phase2: LossWeights = PHASE2
    lr: float = 1e-5
    batch_size: int = 8
    phase1_max_epochs: int = 20
    phase2_max_epochs: int = 80
    plateau_tol: float = 1e-3
    plateau_patience: int = 3
    seed: int = 0
    # fresh Adam moments when the loss weights change; the stale second
    # moments would otherwise inflate the step size after the switch
    reset_optimizer: bool = True
    # refresh batch-norm running statistics with the epoch's final weights
    # before validating; the in-training averages trail fast-moving weights
    recalibrate_bn: bool = True

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1:
            raise ConfigError(f"need lr >= 0 and batch size >= 1, got {self.lr}, {self.batch_size}")
        if self.phase1_max_epochs < 0 or self.phase2_max_epochs < 0 or self.plateau_patience < 1:
            raise ConfigError("epoch caps must be >= 0 and patience >= 1")

    @classmethod
    def desk(cls, **kw) -> "TrainSchedule":
        """Short, faster-learning schedule sized for the single-core synthetic benchmark."""
        base = dict(lr=3e-4, phase1_max_epochs=12, phase2_max_epochs=6)
        base.update(kw)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainSchedule":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown schedule keys: {sorted(unknown)}")
        for key in ("phase1", "phase2"):
            if key in d and not isinstance(d[key], LossWeights):
                v = d[key]
                d[key] = LossWeights(**v) if isinstance(v, dict) else LossWeights(*v)
        return cls(**d)


@dataclass
class EpochRecord:
    epoch: int
    phase: int
    loss_a: float
    loss_f: float
    loss_c: float
    total: float
    val_accuracy: float
    val_auc: float
    val_attention_cc: float
    val_loss_a: float = math.nan


@dataclass
class TrainLog:
    rows: List[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.rows:
            w.writerow([getattr(r, c) for c in LOG_COLUMNS])
        return buf.getvalue()

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=np.float64)


def batch_losses(model, images, labels, attention_true, vis_override=None):
    """Forward one batch; returns (loss_a, loss_f, loss_c, classification logits).

    Terms belonging to a missing subnet come back as None.  ``vis_override``
    replaces the map that masks the classification subnet.
    """
    cfg = model.config
    att = model.attention_forward(images) if model.attention is not None else None
    loss_a = loss_f = None
    if att is not None:
        if attention_true is None:
            raise InputError("training the attention subnet needs ground-truth attention maps")
        loss_a = loss_attention(attention_true, att)
    if model.localization is not None:
        loc_logit, vis, _ = model.localization_forward_and_visualize(images, att)
        loss_f = loss_classification(labels, loc_logit)
    elif att is not None:
        vis = att.data[:, 0].copy()
    else:
        n = len(labels)
        vis = np.ones((n, cfg.attention_size, cfg.attention_size))
    if vis_override is not None:
        vis = vis_override
    cls_logit = model.classification_forward(images, vis)
    loss_c = loss_classification(labels, cls_logit)
    return loss_a, loss_f, loss_c, cls_logit


def _value(t) -> float:
    return math.nan if t is None else t.item()


def train_step(model, params, state: AdamState, images, labels, attention_true,
               weights: LossWeights, lr: float):
    loss_a, loss_f, loss_c, _ = batch_losses(model, images, labels, attention_true)
    total = total_loss(loss_a, loss_f, loss_c, weights)
    values = (_value(loss_a), _value(loss_f), _value(loss_c), total.item())
    if not math.isfinite(values[3]):
        raise NonFiniteLossError(
            f"non-finite loss (loss_a={values[0]}, loss_f={values[1]}, loss_c={values[2]}); "
            f"try a smaller learning rate")
    grads = grad(total, params)
    adam_step(params, grads, state, lr)
    return values


def recalibrate_batch_norm(model, images: np.ndarray, batch_size: int) -> None:
    """Forward the images in training mode (no parameter update) to refresh running statistics."""
    model.train()
    for start in range(0, len(images), batch_size):
        model.forward(images[start:start + batch_size])
    model.eval()


def validation_metrics(model, split: Split, batch_size: int = 16):
    """(accuracy, auc, mean attention CC, attention loss) on a split, inference mode."""
    logits, maps = predict(model, split.images, batch_size)
    acc = accuracy(confusion(logits, split.labels))
    try:
        _, auc = roc_auc(logits, split.labels)
    except UndefinedRateError:
        auc = math.nan
    cc = loss_a = math.nan
    if maps is not None and split.attention is not None:
        mean, _ = cc_summary(attention_ccs(maps, split.attention))
        cc = math.nan if mean is None else mean
        loss_a = loss_attention(split.attention, maps).item()
    return acc, auc, cc, loss_a


def _plateaued(history: List[float], tol: float, patience: int) -> bool:
    """True once the last ``patience`` epochs each improved by less than ``tol`` (relative)."""
    if len(history) <= patience:
        return False
    recent = history[-(patience + 1):]
    for prev, cur in zip(recent[:-1], recent[1:]):
        if prev - cur >= tol * abs(prev):
            return False
    return True


def run_schedule(model, dataset: Dataset, schedule: TrainSchedule,
                 on_epoch: Optional[Callable] = None):
    """Train in place; returns ``(model, TrainLog)``.

    Phase 1 lasts until the validation attention loss plateaus or its cap is
    reached; phase 2 then runs for its own cap.  Without an attention subnet
    there is nothing to converge, so phase 1 is skipped.
    """

    def enter_phase2():
        nonlocal phase, phase_epochs, state
        phase, phase_epochs = 2, 0
        if schedule.reset_optimizer:
            state = AdamState.for_params(params)

    train = dataset.train
    if len(train) == 0:
        raise InputError("training split is empty")
    if len(dataset.val) == 0:
        raise InputError("validation split is empty")
    params = model.parameters()
    state = AdamState.for_params(params)
    rng = np.random.default_rng(schedule.seed)
    tlog = TrainLog()
    phase = 1 if (schedule.phase1_max_epochs > 0 and model.attention is not None) else 2
    phase_epochs = 0
    val_loss_a: List[float] = []
    epoch = 0
    model.train()
    while True:
        cap = schedule.phase1_max_epochs if phase == 1 else schedule.phase2_max_epochs
        if phase_epochs >= cap:
            if phase == 2:
                break
            enter_phase2()
            continue
        weights = schedule.phase1 if phase == 1 else schedule.phase2
        epoch += 1
        order = rng.permutation(len(train))
        sums = np.zeros(4)
        for start in range(0, len(order), schedule.batch_size):
            idx = np.sort(order[start:start + schedule.batch_size])
            att = None if train.attention is None else train.attention[idx]
            vals = train_step(model, params, state, train.images[idx], train.labels[idx],
                              att, weights, schedule.lr)
            sums += np.array(vals) * len(idx)
        means = sums / len(train)
        if schedule.recalibrate_bn:
            recalibrate_batch_norm(model, train.images, schedule.batch_size)
        acc, auc, cc, vla = validation_metrics(model, dataset.val)
        model.train()
        rec = EpochRecord(epoch, phase, *means.tolist(), acc, auc, cc, vla)
        tlog.rows.append(rec)
        log.info("epoch %d phase %d total %.4f val acc %.3f auc %.3f cc %.3f",
                 epoch, phase, rec.total, acc, auc, cc)
        if on_epoch is not None:
            on_epoch(rec, model)
        phase_epochs += 1
        if phase == 1:
            val_loss_a.append(vla)
            if _plateaued(val_loss_a, schedule.plateau_tol, schedule.plateau_patience):
                enter_phase2()
    return model, tlog
