"""Attention, classification and combined losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from agcnn.core import functional as F
from agcnn.core.tensor import Tensor, as_tensor
from agcnn.errors import ConfigError

KL_FLOOR = 1e-8


@dataclass(frozen=True)
class LossWeights:
    attention: float   # alpha
    localization: float  # beta
    classification: float  # gamma

    def __post_init__(self):
        w = (self.attention, self.localization, self.classification)
        if min(w) < 0 or max(w) <= 0:
            raise ConfigError(f"loss weights must be non-negative with one positive, got {w}")


PHASE1 = LossWeights(20.0, 1.0, 1.0)
PHASE2 = LossWeights(1.0, 10.0, 10.0)


def _to_simplex(m: Tensor) -> Tensor:
    """Floor at KL_FLOOR and renormalize each map (last two axes) to sum 1."""
    m = F.clamp_min(m, KL_FLOOR)
    return F.div(m, F.sum(m, axis=(-2, -1), keepdims=True))


def loss_attention(target, predicted, cell_mean: bool = False) -> Tensor:
    """KL divergence ``sum p log(p / q)`` of the target from the prediction, averaged over the batch.

    Both maps are floored at 1e-8 and renormalized to sum 1 first, so the
    value is 0 exactly when the renormalized maps coincide and stays finite
    when the prediction has hard zeros.  Accepts H x W or N x ... x H x W.

    The plain sum equals the per-cell mean of ``A log(A / A_hat)`` over maps
    scaled to unit mean, which keeps the loss on the same scale as the
    cross-entropy terms.  ``cell_mean=True`` additionally divides by the cell
    count I*J (a much smaller loss for the same maps).
    """
    a, ahat = as_tensor(target), as_tensor(predicted)
    if a.shape[-2:] != ahat.shape[-2:] or a.size != ahat.size:
        raise ConfigError(f"attention maps differ in shape: {a.shape} vs {ahat.shape}")
    a = F.reshape(a, ahat.shape)
    p, q = _to_simplex(a), _to_simplex(ahat)
    # log(p) - log(q) rather than log(p / q) keeps exact zeros when p == q
    terms = F.mul(p, F.sub(F.log(p), F.log(q)))
    cells = ahat.shape[-1] * ahat.shape[-2]
    n_maps = ahat.size // cells
    return F.mul(F.sum(terms), 1.0 / (n_maps * (cells if cell_mean else 1)))


def loss_classification(labels, logits) -> Tensor:
    """Binary cross-entropy on logits, ``-[l log s(z) + (1-l) log(1-s(z))]``, batch mean."""
    return F.bce_with_logits(as_tensor(logits), labels)


def total_loss(loss_a, loss_f, loss_c, weights: LossWeights):
    """``alpha*loss_a + beta*loss_f + gamma*loss_c``; zero-weight or missing terms are skipped."""
    total = None
    for w, term in ((weights.attention, loss_a), (weights.localization, loss_f),
                    (weights.classification, loss_c)):
        if w == 0 or term is None:
            continue
        scaled = F.mul(term, w) if isinstance(term, Tensor) else w * term
        total = scaled if total is None else total + scaled
    if total is None:
        raise ConfigError("every weighted loss term is missing")
    return total


def bce_value(label: float, logit: float) -> float:
    """Scalar reference form of the classification loss."""
    return float(np.maximum(logit, 0) - label * logit + np.log1p(np.exp(-abs(logit))))
