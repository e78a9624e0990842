"""Differentiable operations over :class:`Tensor`.

Convolutions use an im2col layout: patches are gathered with a strided view
and contracted against the flattened kernel with a single matrix product.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError
from .tensor import Tensor, as_tensor, make


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible") from None


# -- elementwise / structural ----------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make(a.data + b.data, (a, b), back, "add")


def scale(a: Tensor, factor: float) -> Tensor:
    def back(g):
        return (g * factor,)

    return make(a.data * factor, (a,), back, "scale")


def elementwise_mul(a, b) -> Tensor:
    """Hadamard product; numpy broadcasting rules apply."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "elementwise_mul")

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make(a.data * b.data, (a, b), back, "mul")


def reshape(a: Tensor, shape) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None

    def back(g):
        return (g.reshape(a.shape),)

    return make(out, (a,), back, "reshape")


def broadcast_to(a: Tensor, shape) -> Tensor:
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {tuple(shape)}") from None

    def back(g):
        return (_unbroadcast(g, a.shape),)

    return make(out, (a,), back, "broadcast_to")


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make(out, (a,), back, "sum")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make(out, tuple(tensors), back, "concat")


def relu(t: Tensor) -> Tensor:
    mask = t.data > 0

    def back(g):
        return (g * mask,)

    return make(t.data * mask, (t,), back, "relu")


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    if t.ndim == 0 or t.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make(out, (t,), back, "softmax")


def global_avg_pool(t: Tensor) -> Tensor:
    """Per-channel spatial mean, ``(N, C, H, W) -> (N, C)``."""
    if t.ndim != 4:
        raise ShapeError(f"global_avg_pool expects NCHW, got {t.shape}")
    n, c, h, w = t.shape

    def back(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), t.shape).copy(),)

    return make(t.data.mean(axis=(2, 3)), (t,), back, "gap")


def linear(t: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``t @ weight.T + bias`` with ``weight`` shaped ``(out, in)``."""
    if t.ndim != 2 or weight.ndim != 2 or t.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {t.shape} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} does not match {weight.shape[0]} outputs")
    out = t.data @ weight.data.T
    if bias is not None:
        out = out + bias.data

    def back(g):
        gb = g.sum(axis=0) if bias is not None else None
        return g @ weight.data, g.T @ t.data, gb

    parents = (t, weight) if bias is None else (t, weight, bias)
    return make(out, parents, back, "linear")


def mse_loss(pred: Tensor, target) -> Tensor:
    target = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target

    def back(g):
        return (g * 2.0 * diff / diff.size,)

    return make(np.mean(diff * diff), (pred,), back, "mse")


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under ``softmax(logits)``."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    n = logits.shape[0]
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()

    def back(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)

    return make(loss, (logits,), back, "cross_entropy")


# -- pooling ----------------------------------------------------------------


def maxpool2d(t: Tensor, window: int = 2) -> Tensor:
    """Non-overlapping max pooling; trailing rows/cols that do not fill a window are dropped."""
    if t.ndim != 4:
        raise ShapeError(f"maxpool2d expects NCHW, got {t.shape}")
    n, c, h, w = t.shape
    ho, wo = h // window, w // window
    if ho == 0 or wo == 0:
        raise ShapeError(f"maxpool2d: window {window} larger than input {h}x{w}")
    x = t.data[:, :, : ho * window, : wo * window]
    blocks = x.reshape(n, c, ho, window, wo, window).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, -1)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def back(g):
        gb = np.zeros_like(blocks)
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gx = gb.reshape(n, c, ho, wo, window, window).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * window, wo * window)
        full = np.zeros(t.shape)
        full[:, :, : ho * window, : wo * window] = gx
        return (full,)

    return make(out, (t,), back, "maxpool2d")


# -- convolution --------------------------------------------------------------


def _im2col(x: np.ndarray, k: int, stride: int, padding: int):
    """``(N, C, H, W) -> (N*Ho*Wo, C*k*k)`` patches plus output spatial size."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return cols, ho, wo


def _col2im(cols: np.ndarray, shape: tuple, k: int, stride: int, padding: int, ho: int, wo: int):
    """Adjoint of :func:`_im2col`: scatter-add patches back onto an ``shape`` image."""
    n, c, h, w = shape
    hp, wp = h + 2 * padding, w + 2 * padding
    out = np.zeros((n, c, hp, wp))
    patches = cols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 4, 5, 1, 2)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += patches[:, :, i, j]
    if padding:
        out = out[:, :, padding : padding + h, padding : padding + w]
    return out


def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW ``x`` with an ``(O, C, k, k)`` kernel."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects NCHW input and OCkk weight, got {x.shape} and {weight.shape}")
    n, c, h, w = x.shape
    o, wc, kh, kw = weight.shape
    if wc != c:
        raise ShapeError(f"conv2d: input has {c} channels but weight expects {wc}")
    if kh != kw:
        raise ShapeError(f"conv2d: only square kernels supported, got {kh}x{kw}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} does not fit padded input {h}x{w} (padding {padding})")
    if bias is not None and bias.shape != (o,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {o} output channels")
    k = kh
    cols, ho, wo = _im2col(x.data, k, stride, padding)
    wmat = weight.data.reshape(o, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gw = (g2.T @ cols).reshape(weight.shape)
        gx = _col2im(g2 @ wmat, x.shape, k, stride, padding, ho, wo) if x.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None else None
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(np.ascontiguousarray(out), parents, back, "conv2d")


def transposed_output_size(size: int, k: int, stride: int, padding: int, output_padding: int = 0) -> int:
    return (size - 1) * stride - 2 * padding + k + output_padding


def transposed_conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    output_padding: int = 0,
) -> Tensor:
    """Adjoint of :func:`conv2d` with the same ``(O, C, k, k)`` weight layout.

    Maps an ``O``-channel input to ``C`` channels. ``output_padding`` appends
    rows/cols on the bottom/right so that stride-2 layers can exactly double
    the spatial size.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"transposed_conv2d expects NCHW input and OCkk weight, got {x.shape} and {weight.shape}")
    n, o, h, w = x.shape
    wo_, c, k, kw = weight.shape
    if wo_ != o:
        raise ShapeError(f"transposed_conv2d: input has {o} channels but weight expects {wo_}")
    if k != kw:
        raise ShapeError("transposed_conv2d: only square kernels supported")
    if output_padding < 0 or (output_padding and output_padding >= stride):
        raise ShapeError("output_padding must be smaller than stride")
    if bias is not None and bias.shape != (c,):
        raise ShapeError(f"transposed_conv2d: bias {bias.shape} does not match {c} output channels")
    ho = transposed_output_size(h, k, stride, padding, output_padding)
    wo = transposed_output_size(w, k, stride, padding, output_padding)
    if ho < 1 or wo < 1:
        raise ShapeError("transposed_conv2d: padding too large for input")
    wmat = weight.data.reshape(o, -1)
    xcols = x.data.transpose(0, 2, 3, 1).reshape(-1, o)
    out = _col2im(xcols @ wmat, (n, c, ho, wo), k, stride, padding, h, w)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def back(g):
        gcols, gh, gw_ = _im2col(g, k, stride, padding)
        # output_padding rows only receive bias; crop any extra patch rows they create
        gcols = gcols.reshape(n, gh, gw_, -1)[:, :h, :w].reshape(n * h * w, -1)
        gx = (gcols @ wmat.T).reshape(n, h, w, o).transpose(0, 3, 1, 2)
        gweight = (xcols.T @ gcols).reshape(weight.shape)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gweight, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(out, parents, back, "transposed_conv2d")
