"""Layer parameter records, initialization, and a light module container."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from agcnn.core import functional as F
from agcnn.core.tensor import Tensor
from agcnn.errors import ConfigError

KINDS = ("conv", "transposed-conv", "max-pool", "batch-norm", "fully-connected")


@dataclass(eq=False)
class LayerParams:
    kind: str
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    in_channels: int = 0
    out_channels: int = 0
    weight: Optional[Tensor] = None
    bias: Optional[Tensor] = None
    running_mean: Optional[np.ndarray] = None
    running_var: Optional[np.ndarray] = None
    momentum: float = 0.9
    eps: float = 1e-5

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.stride < 1 or self.padding < 0:
            raise ConfigError(f"stride must be >= 1 and padding >= 0 "
                              f"(got {self.stride}, {self.padding})")
        expected = self.expected_weight_shape()
        if self.weight is not None and expected is not None and self.weight.shape != expected:
            raise ConfigError(f"{self.kind} weight shape {self.weight.shape} != {expected}")

    def expected_weight_shape(self):
        k, ci, co = self.kernel, self.in_channels, self.out_channels
        return {
            "conv": (co, ci, k, k),
            "transposed-conv": (ci, co, k, k),
            "batch-norm": (co,),
            "fully-connected": (co, ci),
        }.get(self.kind)

    def tensors(self) -> Iterator[tuple]:
        if self.weight is not None:
            yield "weight", self.weight
        if self.bias is not None:
            yield "bias", self.bias

    def buffers(self) -> Iterator[tuple]:
        if self.running_mean is not None:
            yield "running_mean", self.running_mean
            yield "running_var", self.running_var


def _fan_in_normal(rng: np.random.Generator, shape, fan_in: int) -> Tensor:
    return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), requires_grad=True)


def _zeros(n: int) -> Tensor:
    return Tensor(np.zeros(n), requires_grad=True)


def conv_params(rng, cin, cout, kernel, stride=1, padding=None, bias=False) -> LayerParams:
    """Conv layer with fan-in scaled normal weights; ``padding=None`` means "same"."""
    padding = kernel // 2 if padding is None else padding
    w = _fan_in_normal(rng, (cout, cin, kernel, kernel), cin * kernel * kernel)
    return LayerParams("conv", kernel, stride, padding, cin, cout, w,
                       _zeros(cout) if bias else None)


def deconv_params(rng, cin, cout, kernel=4, stride=2, padding=1, bias=False) -> LayerParams:
    w = _fan_in_normal(rng, (cin, cout, kernel, kernel), cin * kernel * kernel // (stride * stride))
    return LayerParams("transposed-conv", kernel, stride, padding, cin, cout, w,
                       _zeros(cout) if bias else None)


def bn_params(channels, momentum=0.9, eps=1e-5) -> LayerParams:
    return LayerParams("batch-norm", in_channels=channels, out_channels=channels,
                       weight=Tensor(np.ones(channels), requires_grad=True),
                       bias=_zeros(channels),
                       running_mean=np.zeros(channels), running_var=np.ones(channels),
                       momentum=momentum, eps=eps)


def fc_params(rng, din, dout) -> LayerParams:
    return LayerParams("fully-connected", in_channels=din, out_channels=dout,
                       weight=_fan_in_normal(rng, (dout, din), din), bias=_zeros(dout))


def pool_params(window, stride, padding=0) -> LayerParams:
    return LayerParams("max-pool", kernel=window, stride=stride, padding=padding)


def conv2d(x: Tensor, p: LayerParams) -> Tensor:
    if p.kind != "conv":
        raise ConfigError(f"conv2d given a {p.kind} layer")
    return F.conv2d_raw(x, p.weight, p.bias, p.stride, p.padding)


def transposed_conv2d(x: Tensor, p: LayerParams) -> Tensor:
    if p.kind != "transposed-conv":
        raise ConfigError(f"transposed_conv2d given a {p.kind} layer")
    return F.conv_transpose2d_raw(x, p.weight, p.bias, p.stride, p.padding)


def max_pool2d(x: Tensor, p: LayerParams) -> Tensor:
    return F.max_pool2d(x, p.kernel, p.stride, p.padding)


def batch_norm(x: Tensor, p: LayerParams, training: bool) -> Tensor:
    if p.kind != "batch-norm":
        raise ConfigError(f"batch_norm given a {p.kind} layer")
    return F.batch_norm_raw(x, p.weight, p.bias, p.running_mean, p.running_var,
                            training, p.momentum, p.eps)


def linear(x: Tensor, p: LayerParams) -> Tensor:
    if p.kind != "fully-connected":
        raise ConfigError(f"linear given a {p.kind} layer")
    return F.linear_raw(x, p.weight, p.bias)


class Module:
    """Container that discovers LayerParams and sub-modules through its attributes."""

    training = True

    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, (LayerParams, Module)):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, (LayerParams, Module)):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, child in self._children():
            full = f"{prefix}{name}"
            if isinstance(child, LayerParams):
                for pname, t in child.tensors():
                    yield f"{full}.{pname}", t
            else:
                yield from child.named_parameters(full + ".")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple]:
        for name, child in self._children():
            full = f"{prefix}{name}"
            if isinstance(child, LayerParams):
                for bname, arr in child.buffers():
                    yield f"{full}.{bname}", arr
            else:
                yield from child.named_buffers(full + ".")

    def parameters(self) -> list:
        return [t for _, t in self.named_parameters()]

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for _, child in self._children():
            if isinstance(child, Module):
                child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def state_dict(self) -> dict:
        state = {name: t.data.copy() for name, t in self.named_parameters()}
        state.update({name: arr.copy() for name, arr in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict) -> None:
        targets = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        missing = (set(targets) | set(buffers)) - set(state)
        if missing:
            raise ConfigError(f"state is missing entries: {sorted(missing)[:5]}")
        for name, t in targets.items():
            if state[name].shape != t.shape:
                raise ConfigError(f"{name}: shape {state[name].shape} != {t.shape}")
            t.data = np.array(state[name], dtype=np.float64)
        for name, arr in buffers.items():
            arr[...] = state[name]
