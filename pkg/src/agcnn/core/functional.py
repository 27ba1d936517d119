"""Differentiable primitives on :class:`~agcnn.core.tensor.Tensor`.

Convolutions use an im2col layout with one GEMM per call.  All spatial
tensors are ``N x C x H x W``.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from agcnn.core.tensor import Tensor, as_tensor, make_result
from agcnn.errors import ConfigError


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def vjp(g, needs):
        return (_unbroadcast(g, sa) if needs[0] else None,
                _unbroadcast(g, sb) if needs[1] else None)

    return make_result(a.data + b.data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def vjp(g, needs):
        return (_unbroadcast(g, sa) if needs[0] else None,
                _unbroadcast(-g, sb) if needs[1] else None)

    return make_result(a.data - b.data, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def vjp(g, needs):
        return (_unbroadcast(g * bd, ad.shape) if needs[0] else None,
                _unbroadcast(g * ad, bd.shape) if needs[1] else None)

    return make_result(ad * bd, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def vjp(g, needs):
        return (_unbroadcast(g / bd, ad.shape) if needs[0] else None,
                _unbroadcast(-g * ad / (bd * bd), bd.shape) if needs[1] else None)

    return make_result(ad / bd, (a, b), vjp, "div")


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    active = x.data > 0

    def vjp(g, needs):
        return (np.where(active, g, 0.0),)

    # np.maximum keeps NaN visible instead of silently zeroing it
    return make_result(np.maximum(x.data, 0.0), (x,), vjp, "relu", rectifier=True)


def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)

    def vjp(g, needs):
        return (g * y * (1.0 - y),)

    return make_result(y, (x,), vjp, "sigmoid")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


sigmoid_array = _sigmoid


def log(x: Tensor) -> Tensor:
    x = as_tensor(x)
    xd = x.data

    def vjp(g, needs):
        return (g / xd,)

    return make_result(np.log(xd), (x,), vjp, "log")


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor); gradient passes where x > floor."""
    x = as_tensor(x)
    keep = x.data > floor

    def vjp(g, needs):
        return (np.where(keep, g, 0.0),)

    return make_result(np.where(keep, x.data, floor), (x,), vjp, "clamp_min")


def pointwise(kind: str, *inputs) -> Tensor:
    """Elementwise op by name; binary operands must share a shape or be scalars."""
    if kind in ("relu", "sigmoid"):
        if len(inputs) != 1:
            raise ConfigError(f"{kind} takes one operand, got {len(inputs)}")
        return relu(inputs[0]) if kind == "relu" else sigmoid(inputs[0])
    if kind in ("add", "multiply"):
        if len(inputs) != 2:
            raise ConfigError(f"{kind} takes two operands, got {len(inputs)}")
        a, b = as_tensor(inputs[0]), as_tensor(inputs[1])
        if a.shape != b.shape and a.size != 1 and b.size != 1:
            raise ConfigError(f"{kind}: operand shapes {a.shape} and {b.shape} differ")
        return add(a, b) if kind == "add" else mul(a, b)
    raise ConfigError(f"unknown pointwise kind {kind!r}")


# ---------------------------------------------------------------------------
# reductions and reshapes


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape

    def vjp(g, needs):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), vjp, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(x: Tensor, shape: tuple) -> Tensor:
    x = as_tensor(x)
    old = x.shape

    def vjp(g, needs):
        return (g.reshape(old),)

    return make_result(x.data.reshape(shape), (x,), vjp, "reshape")


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def global_avg_pool(x: Tensor) -> Tensor:
    """N x C x H x W -> N x C."""
    return mean(x, axis=(2, 3))


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    inputs = [as_tensor(t) for t in inputs]
    if not inputs:
        raise ConfigError("concat_channels needs at least one tensor")
    ref = inputs[0].shape
    for t in inputs[1:]:
        if t.ndim != len(ref) or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ConfigError(f"concat_channels: shape {t.shape} incompatible with {ref}")
    if len(inputs) == 1:
        return inputs[0]
    bounds = np.cumsum([0] + [t.shape[1] for t in inputs])

    def vjp(g, needs):
        return tuple(g[:, bounds[i]:bounds[i + 1]] if needs[i] else None
                     for i in range(len(inputs)))

    return make_result(np.concatenate([t.data for t in inputs], axis=1), inputs, vjp, "concat")


# ---------------------------------------------------------------------------
# convolution kernels on raw arrays


def conv_output_size(n: int, k: int, s: int, p: int) -> int:
    return (n + 2 * p - k) // s + 1


def _windows(xp: np.ndarray, kh: int, kw: int, s: int, ho: int, wo: int) -> np.ndarray:
    """View (N, C, kh, kw, Ho, Wo) of every kernel placement in padded ``xp``."""
    sn, sc, sh, sw = xp.strides
    n, c = xp.shape[:2]
    return as_strided(xp, (n, c, kh, kw, ho, wo), (sn, sc, sh, sw, sh * s, sw * s),
                      writeable=False)


def _pad(x: np.ndarray, p: int, value: float = 0.0) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)), constant_values=value)


def _conv_forward(x, w, s, p):
    """Cross-correlation. Returns output and the column matrix (C*k*k, N*Ho*Wo)."""
    n, c, h, wd = x.shape
    co, ci, kh, kw = w.shape
    ho, wo = conv_output_size(h, kh, s, p), conv_output_size(wd, kw, s, p)
    cols = _windows(_pad(x, p), kh, kw, s, ho, wo)
    cols = cols.transpose(1, 2, 3, 0, 4, 5).reshape(c * kh * kw, n * ho * wo)
    out = w.reshape(co, -1) @ cols
    return out.reshape(co, n, ho, wo).transpose(1, 0, 2, 3), cols


def _conv_input_grad(dy, w, in_shape, s, p):
    """Adjoint of :func:`_conv_forward` with respect to the input."""
    n, c, h, wd = in_shape
    co, ci, kh, kw = w.shape
    ho, wo = dy.shape[2:]
    qh, qw = kh - 1 - p, kw - 1 - p
    if s == 1 and qh >= 0 and qw >= 0:
        # full correlation of the zero-dilated gradient with the flipped kernel
        rh = h - (s * (ho - 1) + 1) - 2 * qh + kh - 1
        rw = wd - (s * (wo - 1) + 1) - 2 * qw + kw - 1
        dyd = np.zeros((n, co, s * (ho - 1) + 1 + 2 * qh + rh, s * (wo - 1) + 1 + 2 * qw + rw))
        dyd[:, :, qh:qh + s * (ho - 1) + 1:s, qw:qw + s * (wo - 1) + 1:s] = dy
        wf = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        return np.ascontiguousarray(_conv_forward(dyd, wf, 1, 0)[0])
    dy2 = dy.transpose(1, 0, 2, 3).reshape(co, -1)
    dcols = (w.reshape(co, -1).T @ dy2).reshape(c, kh, kw, n, ho, wo)
    dcols = np.ascontiguousarray(dcols.transpose(1, 2, 3, 0, 4, 5))
    dxp = np.zeros((n, c, h + 2 * p, wd + 2 * p))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s] += dcols[i, j]
    if p:
        dxp = dxp[:, :, p:p + h, p:p + wd]
    return np.ascontiguousarray(dxp)


def _conv_weight_grad(cols, dy, w_shape):
    co = w_shape[0]
    dy2 = dy.transpose(1, 0, 2, 3).reshape(co, -1)
    return (dy2 @ cols.T).reshape(w_shape)


def _check_conv(x: Tensor, w: Tensor, s: int, p: int, transposed: bool):
    if x.ndim != 4:
        raise ConfigError(f"convolution input must be N x C x H x W, got shape {x.shape}")
    if s < 1 or p < 0:
        raise ConfigError(f"invalid stride {s} / padding {p}")
    cin = w.shape[0] if transposed else w.shape[1]
    if x.shape[1] != cin:
        raise ConfigError(f"input has {x.shape[1]} channels, weight {w.shape} expects {cin}")
    kh, kw = w.shape[2:]
    h, wd = x.shape[2:]
    if not transposed and (h + 2 * p < kh or wd + 2 * p < kw):
        raise ConfigError(
            f"input {h}x{wd} with padding {p} admits no {kh}x{kw} kernel placement")


def conv2d_raw(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
               stride: int = 1, padding: int = 0) -> Tensor:
    _check_conv(x, w, stride, padding, transposed=False)
    parents = (x, w) if b is None else (x, w, b)
    out, cols = _conv_forward(x.data, w.data, stride, padding)
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1)
    xs, wd = x.shape, w.data

    def vjp(g, needs):
        gx = _conv_input_grad(g, wd, xs, stride, padding) if needs[0] else None
        gw = _conv_weight_grad(cols, g, wd.shape) if needs[1] else None
        if b is None:
            return gx, gw
        return gx, gw, (g.sum(axis=(0, 2, 3)) if needs[2] else None)

    return make_result(out, parents, vjp, "conv2d")


def transposed_conv_output_size(n: int, k: int, s: int, p: int) -> int:
    return (n - 1) * s - 2 * p + k


def conv_transpose2d_raw(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
                         stride: int = 1, padding: int = 0) -> Tensor:
    """Weight layout ``Cin x Cout x k x k``; the exact adjoint of :func:`conv2d_raw`."""
    _check_conv(x, w, stride, padding, transposed=True)
    n, _, h, wd = x.shape
    cout = w.shape[1]
    ho = transposed_conv_output_size(h, w.shape[2], stride, padding)
    wo = transposed_conv_output_size(wd, w.shape[3], stride, padding)
    if ho < 1 or wo < 1:
        raise ConfigError(f"transposed convolution output would be {ho}x{wo}")
    out = _conv_input_grad(x.data, w.data, (n, cout, ho, wo), stride, padding)
    if b is not None:
        out = out + b.data.reshape(1, -1, 1, 1)
    parents = (x, w) if b is None else (x, w, b)
    xd, wdat = x.data, w.data

    def vjp(g, needs):
        gx = gw = None
        if needs[0] or needs[1]:
            y, cols = _conv_forward(g, wdat, stride, padding)
            gx = y if needs[0] else None
            if needs[1]:
                # conv weight grad with (g as input, x as output gradient)
                gw = _conv_weight_grad(cols, xd, wdat.shape)
        if b is None:
            return gx, gw
        return gx, gw, (g.sum(axis=(0, 2, 3)) if needs[2] else None)

    return make_result(out, parents, vjp, "conv_transpose2d")


def max_pool2d(x: Tensor, window: int, stride: Optional[int] = None,
               padding: int = 0) -> Tensor:
    """Max over windows; ties send the gradient to the first row-major index."""
    x = as_tensor(x)
    stride = window if stride is None else stride
    if x.ndim != 4:
        raise ConfigError(f"max_pool2d input must be 4-d, got shape {x.shape}")
    n, c, h, wd = x.shape
    if window > h + 2 * padding or window > wd + 2 * padding:
        raise ConfigError(f"pool window {window} larger than input {h}x{wd}")
    if stride < 1 or padding < 0 or padding > window // 2:
        raise ConfigError(f"invalid pool stride {stride} / padding {padding}")
    ho = conv_output_size(h, window, stride, padding)
    wo = conv_output_size(wd, window, stride, padding)
    xp = _pad(x.data, padding, value=-np.inf)
    win = _windows(xp, window, window, stride, ho, wo)
    flat = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c, ho, wo, window * window)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def vjp(g, needs):
        dxp = np.zeros(xp.shape)
        for idx in range(window * window):
            i, j = divmod(idx, window)
            hit = arg == idx
            if hit.any():
                dxp[:, :, i:i + stride * (ho - 1) + 1:stride,
                    j:j + stride * (wo - 1) + 1:stride] += np.where(hit, g, 0.0)
        if padding:
            dxp = dxp[:, :, padding:padding + h, padding:padding + wd]
        return (np.ascontiguousarray(dxp),)

    return make_result(out, (x,), vjp, "max_pool2d")


def batch_norm_raw(x: Tensor, gamma: Tensor, beta: Tensor,
                   running_mean: np.ndarray, running_var: np.ndarray,
                   training: bool, momentum: float = 0.9, eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over (N, H, W).

    In training mode the running statistics are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    if x.ndim not in (2, 4) or x.shape[1] != gamma.shape[0]:
        raise ConfigError(f"batch_norm: input {x.shape} vs {gamma.shape[0]} channels")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, -1) if x.ndim == 2 else (1, -1, 1, 1)
    xd = x.data
    if training:
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mu
        running_var *= momentum
        running_var += (1.0 - momentum) * var
    else:
        mu, var = running_mean.copy(), running_var.copy()
    invstd = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu.reshape(bshape)) * invstd.reshape(bshape)
    gd = gamma.data.reshape(bshape)
    out = gd * xhat + beta.data.reshape(bshape)
    m = xd.size // xd.shape[1]

    def vjp(g, needs):
        gx = None
        if needs[0]:
            dxhat = g * gd
            if training:
                s1 = dxhat.sum(axis=axes).reshape(bshape)
                s2 = (dxhat * xhat).sum(axis=axes).reshape(bshape)
                gx = invstd.reshape(bshape) / m * (m * dxhat - s1 - xhat * s2)
            else:
                gx = dxhat * invstd.reshape(bshape)
        ggamma = (g * xhat).sum(axis=axes) if needs[1] else None
        gbeta = g.sum(axis=axes) if needs[2] else None
        return gx, ggamma, gbeta

    return make_result(out, (x, gamma, beta), vjp, "batch_norm")


def linear_raw(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """``x @ w.T + b`` with weight layout ``D' x D``."""
    if x.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ConfigError(f"linear: input {x.shape} incompatible with weight {w.shape}")
    out = x.data @ w.data.T
    if b is not None:
        out = out + b.data
    xd, wd = x.data, w.data
    parents = (x, w) if b is None else (x, w, b)

    def vjp(g, needs):
        gx = g @ wd if needs[0] else None
        gw = g.T @ xd if needs[1] else None
        if b is None:
            return gx, gw
        return gx, gw, (g.sum(axis=0) if needs[2] else None)

    return make_result(out, parents, vjp, "linear")


# ---------------------------------------------------------------------------
# resizing


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Corner-aligned interpolation matrix of shape (n_out, n_in)."""
    m = np.zeros((n_out, n_in))
    lo, hi, t = _lerp_coords(n_in, n_out)
    np.add.at(m, (np.arange(n_out), lo), 1.0 - t)
    np.add.at(m, (np.arange(n_out), hi), t)
    return m


def _lerp_coords(n_in: int, n_out: int):
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.minimum(np.floor(pos).astype(int), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def _resize_array(a: np.ndarray, h: int, w: int) -> np.ndarray:
    # lerp form a0 + t*(a1 - a0) keeps constant maps exactly constant
    lo, hi, t = _lerp_coords(a.shape[-2], h)
    top, bot = a[..., lo, :], a[..., hi, :]
    a = top + t[:, None] * (bot - top)
    lo, hi, t = _lerp_coords(a.shape[-1], w)
    left, right = a[..., lo], a[..., hi]
    return left + t * (right - left)


def resize_bilinear(x: Tensor, size) -> Tensor:
    """Resize the last two axes to ``size`` (int or (H, W)) with corner alignment."""
    x = as_tensor(x)
    h, w = (size, size) if np.isscalar(size) else tuple(size)
    if h < 1 or w < 1:
        raise ConfigError(f"resize target must be at least 1x1, got {h}x{w}")
    if x.shape[-2:] == (h, w):
        return x
    my = bilinear_matrix(x.shape[-2], h)
    mx = bilinear_matrix(x.shape[-1], w)

    def vjp(g, needs):
        return (np.einsum("...ij,ia,jb->...ab", g, my, mx, optimize=True),)

    return make_result(_resize_array(x.data, h, w), (x,), vjp, "resize_bilinear")


# ---------------------------------------------------------------------------
# losses


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean of ``-[l log s(z) + (1-l) log(1-s(z))]`` in its stable softplus form."""
    logits = as_tensor(logits)
    z = logits.data
    lab = np.asarray(labels, dtype=np.float64)
    lab = lab.reshape(z.shape) if lab.size == z.size else np.broadcast_to(lab, z.shape)
    per = np.maximum(z, 0.0) - lab * z + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def vjp(g, needs):
        return ((_sigmoid(z) - lab) * (g / n),)

    return make_result(np.asarray(per.mean()), (logits,), vjp, "bce_with_logits")
