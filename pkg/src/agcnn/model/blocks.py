"""Residual building blocks, feature normalization, and the deconvolutional module."""

from __future__ import annotations

from typing import List, Sequence

from agcnn.core import functional as F
from agcnn.core import layers as L
from agcnn.core.tensor import Tensor
from agcnn.errors import ConfigError


class BasicBlock(L.Module):
    """Two 3x3 conv/BN layers with an identity or projected shortcut."""

    def __init__(self, rng, cin: int, cout: int, stride: int = 1):
        self.conv1 = L.conv_params(rng, cin, cout, 3, stride)
        self.bn1 = L.bn_params(cout)
        self.conv2 = L.conv_params(rng, cout, cout, 3, 1)
        self.bn2 = L.bn_params(cout)
        if stride != 1 or cin != cout:
            self.proj = L.conv_params(rng, cin, cout, 1, stride, padding=0)
            self.proj_bn = L.bn_params(cout)
        else:
            self.proj = None

    def __call__(self, x: Tensor) -> Tensor:
        t = self.training
        h = F.relu(L.batch_norm(L.conv2d(x, self.conv1), self.bn1, t))
        h = L.batch_norm(L.conv2d(h, self.conv2), self.bn2, t)
        short = x if self.proj is None else L.batch_norm(L.conv2d(x, self.proj), self.proj_bn, t)
        return F.relu(F.add(h, short))


class MultiScaleBlock(L.Module):
    """Residual block whose first conv is four parallel convs of different kernel sizes.

    Each branch produces ``cout / 4`` channels with "same" padding; the
    branches are concatenated, normalized, and followed by a 3x3 conv.  The
    shortcut is a stride-matched 1x1 projection.
    """

    def __init__(self, rng, cin: int, cout: int, stride: int = 1,
                 kernels: Sequence[int] = (1, 3, 5, 7)):
        if cout % 4:
            raise ConfigError(f"multi-scale block output channels must be divisible by 4, got {cout}")
        self.branches = [L.conv_params(rng, cin, cout // 4, k, stride) for k in kernels]
        self.bn1 = L.bn_params(cout)
        self.conv2 = L.conv_params(rng, cout, cout, 3, 1)
        self.bn2 = L.bn_params(cout)
        self.proj = L.conv_params(rng, cin, cout, 1, stride, padding=0)

    def __call__(self, x: Tensor) -> Tensor:
        t = self.training
        h = F.concat_channels([L.conv2d(x, b) for b in self.branches])
        h = F.relu(L.batch_norm(h, self.bn1, t))
        h = L.batch_norm(L.conv2d(h, self.conv2), self.bn2, t)
        return F.relu(F.add(h, L.conv2d(x, self.proj)))


def multi_scale_block(x: Tensor, block: MultiScaleBlock) -> Tensor:
    return block(x)


class Stem(L.Module):
    """7x7 stride-2 conv, BN, ReLU, then 3x3 stride-2 max-pool: S -> S/4."""

    def __init__(self, rng, cout: int):
        self.conv = L.conv_params(rng, 3, cout, 7, stride=2, padding=3)
        self.bn = L.bn_params(cout)
        self.pool = L.pool_params(3, 2, padding=1)

    def __call__(self, x: Tensor) -> Tensor:
        h = F.relu(L.batch_norm(L.conv2d(x, self.conv), self.bn, self.training))
        return L.max_pool2d(h, self.pool)


class FeatureNorm(L.Module):
    """1x1 conv to a common width, bilinear resize to a common grid, BN."""

    def __init__(self, rng, in_widths: Sequence[int], channels: int, grid: int):
        self.grid = grid
        self.convs = [L.conv_params(rng, w, channels, 1, padding=0) for w in in_widths]
        self.bns = [L.bn_params(channels) for _ in in_widths]

    def __call__(self, stage_outputs: Sequence[Tensor]) -> List[Tensor]:
        if len(stage_outputs) != len(self.convs):
            raise ConfigError(f"expected {len(self.convs)} stage outputs, got {len(stage_outputs)}")
        out = []
        for x, conv, bn in zip(stage_outputs, self.convs, self.bns):
            h = F.resize_bilinear(L.conv2d(x, conv), (self.grid, self.grid))
            out.append(L.batch_norm(h, bn, self.training))
        return out


def feature_normalize(stage_outputs: Sequence[Tensor], fn: FeatureNorm) -> List[Tensor]:
    return fn(stage_outputs)


class Decoder(L.Module):
    """Four convs and two stride-2 deconvs from the S/8 grid to an S/2 map in (0, 1)."""

    def __init__(self, rng, cin: int, widths: Sequence[int]):
        d0, d1, d2, d3, d4 = widths
        self.conv1 = L.conv_params(rng, cin, d0, 3)
        self.bn1 = L.bn_params(d0)
        self.up1 = L.deconv_params(rng, d0, d1)
        self.bn2 = L.bn_params(d1)
        self.conv2 = L.conv_params(rng, d1, d2, 3)
        self.bn3 = L.bn_params(d2)
        self.up2 = L.deconv_params(rng, d2, d3)
        self.bn4 = L.bn_params(d3)
        self.conv3 = L.conv_params(rng, d3, d4, 3)
        self.bn5 = L.bn_params(d4)
        self.head = L.conv_params(rng, d4, 1, 1, padding=0, bias=True)

    def __call__(self, x: Tensor) -> Tensor:
        t = self.training
        h = F.relu(L.batch_norm(L.conv2d(x, self.conv1), self.bn1, t))
        h = F.relu(L.batch_norm(L.transposed_conv2d(h, self.up1), self.bn2, t))
        h = F.relu(L.batch_norm(L.conv2d(h, self.conv2), self.bn3, t))
        h = F.relu(L.batch_norm(L.transposed_conv2d(h, self.up2), self.bn4, t))
        h = F.relu(L.batch_norm(L.conv2d(h, self.conv3), self.bn5, t))
        return F.sigmoid(L.conv2d(h, self.head))
