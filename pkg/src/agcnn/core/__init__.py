from agcnn.core.tensor import GUIDED, STANDARD, Tensor, grad
from agcnn.core import functional
from agcnn.core.layers import (
    LayerParams,
    Module,
    batch_norm,
    conv2d,
    linear,
    max_pool2d,
    transposed_conv2d,
)
from agcnn.core.functional import concat_channels, pointwise, resize_bilinear

__all__ = [
    "GUIDED",
    "STANDARD",
    "LayerParams",
    "Module",
    "Tensor",
    "batch_norm",
    "concat_channels",
    "conv2d",
    "functional",
    "grad",
    "linear",
    "max_pool2d",
    "pointwise",
    "resize_bilinear",
    "transposed_conv2d",
]


def backward(output: Tensor, mode: str = STANDARD) -> None:
    """Accumulate gradients of a scalar ``output`` into every leaf's ``.grad``."""
    output.backward(mode)
