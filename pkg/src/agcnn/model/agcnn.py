"""The three-subnet attention-guided network.

Pipeline per batch of images ``x`` (N x 3 x S x S, values in [0, 1]):

1. attention subnet: ``x -> A_hat`` (N x 1 x S/2 x S/2, sigmoid output)
2. localization subnet: ``x`` masked by ``A_hat`` -> logit ``l_f``; a guided
   backward pass from ``l_f`` to the input yields the visualization map ``V_hat``
3. classification subnet: ``x`` masked by ``V_hat`` (a constant) -> logit ``l_c``
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from agcnn.core import functional as F
from agcnn.core import layers as L
from agcnn.core.checkpoint import load_tensors, save_tensors
from agcnn.core.tensor import GUIDED, Tensor, grad
from agcnn.errors import ConfigError
from agcnn.model.blocks import BasicBlock, Decoder, FeatureNorm, MultiScaleBlock, Stem
from agcnn.model.config import ModelConfig

STAGE_STRIDES = (1, 2, 2, 2)


def mask(features: Tensor, vis, theta: float) -> Tensor:
    """``F * ((1 - theta) * V + theta)`` with V broadcast over channels.

    ``vis`` is an N x H' x W' (or N x 1 x H' x W') map in [0, 1], resized
    bilinearly to the spatial size of ``features`` when needed.
    """
    v = vis if isinstance(vis, Tensor) else Tensor(vis)
    if v.ndim == 3:
        v = F.reshape(v, (v.shape[0], 1) + v.shape[1:])
    if v.ndim != 4 or v.shape[1] != 1 or v.shape[0] not in (1, features.shape[0]):
        raise ConfigError(f"mask map of shape {v.shape} does not fit features {features.shape}")
    v = F.resize_bilinear(v, features.shape[2:])
    factor = F.add(F.mul(v, 1.0 - theta), theta)
    return F.mul(features, factor)


class AttentionSubnet(L.Module):
    def __init__(self, rng, cfg: ModelConfig):
        w = cfg.widths
        self.stem = Stem(rng, w[0])
        self.stages = []
        cin = w[0]
        for cout, stride in zip(w, STAGE_STRIDES):
            self.stages.append(BasicBlock(rng, cin, cout, stride))
            self.stages.append(BasicBlock(rng, cout, cout, 1))
            cin = cout
        self.fn = FeatureNorm(rng, w, cfg.fn_channels, cfg.fn_grid)
        self.decoder = Decoder(rng, 4 * cfg.fn_channels, cfg.decoder_channels)

    def stage_outputs(self, x: Tensor) -> list:
        h = self.stem(x)
        outs = []
        for i, block in enumerate(self.stages):
            h = block(h)
            if i % 2 == 1:
                outs.append(h)
        return outs

    def __call__(self, x: Tensor) -> Tensor:
        feats = self.fn(self.stage_outputs(x))
        return self.decoder(F.concat_channels(feats))


class MaskedClassifier(L.Module):
    """Stem, four building blocks with masking after each, GAP, two FC layers.

    Shared topology of the localization and classification subnets.
    """

    def __init__(self, rng, cfg: ModelConfig):
        w = cfg.widths
        self.theta = cfg.theta
        self.stem = Stem(rng, w[0])
        self.blocks = []
        cin = w[0]
        for cout, stride in zip(w, STAGE_STRIDES):
            if cfg.multiscale:
                self.blocks.append(MultiScaleBlock(rng, cin, cout, stride, cfg.kernel_menu))
            else:
                self.blocks.append(BasicBlock(rng, cin, cout, stride))
            cin = cout
        self.fc1 = L.fc_params(rng, w[-1], cfg.fc_hidden)
        self.fc2 = L.fc_params(rng, cfg.fc_hidden, 1)

    def __call__(self, x: Tensor, vis=None) -> Tensor:
        """Logit per image; ``vis=None`` runs the unmasked network."""
        h = x if vis is None else mask(x, vis, self.theta)
        h = self.stem(h)
        for block in self.blocks:
            h = block(h)
            if vis is not None:
                h = mask(h, vis, self.theta)
        h = F.relu(L.linear(F.global_avg_pool(h), self.fc1))
        return F.reshape(L.linear(h, self.fc2), (x.shape[0],))


@dataclass
class ForwardOutputs:
    attention: Optional[Tensor]       # N x 1 x S/2 x S/2, None without the attention subnet
    visualization: np.ndarray         # N x S/2 x S/2 in [0, 1]
    loc_logit: Optional[Tensor]       # N, None without the localization subnet
    cls_logit: Tensor                 # N
    vis_degenerate: np.ndarray        # N bools, True where the guided gradient was all zero

    @property
    def attention_maps(self) -> Optional[np.ndarray]:
        return None if self.attention is None else self.attention.data[:, 0]


def visualization_from_gradient(g: np.ndarray, size: int):
    """|guided gradient| -> channel max -> bilinear downsample -> per-image max of 1."""
    mag = np.abs(g).max(axis=1)
    small = F.resize_bilinear(Tensor(mag), (size, size)).data
    peak = small.reshape(small.shape[0], -1).max(axis=1)
    degenerate = ~(peak > 0)
    safe = np.where(degenerate, 1.0, peak)
    vis = np.where(degenerate[:, None, None], 0.0, small / safe[:, None, None])
    return vis, degenerate


class AgcnnModel(L.Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        self.attention = AttentionSubnet(rng, config) if config.use_attention else None
        self.localization = MaskedClassifier(rng, config) if config.use_localization else None
        self.classifier = MaskedClassifier(rng, config)

    def _check_images(self, images) -> Tensor:
        x = images if isinstance(images, Tensor) else Tensor(images)
        s = self.config.image_size
        if x.ndim != 4 or x.shape[1:] != (3, s, s):
            raise ConfigError(f"expected images of shape N x 3 x {s} x {s}, got {x.shape}")
        return x

    def attention_forward(self, images) -> Tensor:
        if self.attention is None:
            raise ConfigError("model was built without the attention prediction subnet")
        return self.attention(self._check_images(images))

    def localization_forward_and_visualize(self, images, attention=None):
        """Localization logit and the guided-backprop visualization map.

        ``attention`` masks the localization subnet; ``None`` means all ones.
        """
        if self.localization is None:
            raise ConfigError("model was built without the localization subnet")
        x = self._check_images(images)
        x_loc = Tensor(x.data, requires_grad=True)
        att = attention if attention is not None else np.ones(
            (x.shape[0], 1, self.config.attention_size, self.config.attention_size))
        logit = self.localization(x_loc, att)
        (g,) = grad(logit, [x_loc], mode=GUIDED, seed=np.ones(logit.shape))
        vis, degenerate = visualization_from_gradient(g, self.config.attention_size)
        return logit, vis, degenerate

    def classification_forward(self, images, vis) -> Tensor:
        x = self._check_images(images)
        return self.classifier(x, vis)

    def forward(self, images, vis_override: Optional[np.ndarray] = None) -> ForwardOutputs:
        """Run all enabled subnets.

        ``vis_override`` replaces the map that masks the classification
        subnet (used to hold it fixed for finite-difference checks).
        """
        x = self._check_images(images)
        n, half = x.shape[0], self.config.attention_size
        att = self.attention(x) if self.attention is not None else None
        loc_logit = None
        degenerate = np.zeros(n, dtype=bool)
        if self.localization is not None:
            loc_logit, vis, degenerate = self.localization_forward_and_visualize(x, att)
        elif att is not None:
            vis = att.data[:, 0].copy()
        else:
            vis = np.ones((n, half, half))
        if vis_override is not None:
            vis = np.asarray(vis_override, dtype=np.float64)
        cls_logit = self.classifier(x, vis)
        return ForwardOutputs(att, vis, loc_logit, cls_logit, degenerate)

    __call__ = forward

    def save(self, path) -> None:
        save_tensors(path, self.state_dict())

    def load(self, path) -> None:
        self.load_state_dict(load_tensors(path))


def attention_forward(images, model: AgcnnModel) -> Tensor:
    return model.attention_forward(images)


def localization_forward_and_visualize(images, attention, model: AgcnnModel):
    return model.localization_forward_and_visualize(images, attention)


def classification_forward(images, vis, model: AgcnnModel) -> Tensor:
    return model.classification_forward(images, vis)


def full_forward(images, model: AgcnnModel) -> ForwardOutputs:
    return model.forward(images)
