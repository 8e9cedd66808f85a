"""Differentiable operations used by the matching network.

Every op takes :class:`Tensor` inputs (constants such as masks and index
arrays are plain numpy arrays) and returns a new Tensor.  Shapes must line
up exactly; the only broadcasting allowed is of constant masks.
"""
from __future__ import annotations

import contextlib

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import (
    ConfigurationError,
    DimensionError,
    EmptyPoolError,
    LabelError,
)
from .tensor import Tensor, make_result

PROB_FLOOR = 1e-12

# --------------------------------------------------------------------------
# kink probe: used by the gradient checker to stay away from ReLU kinks and
# near-ties inside max reductions, where finite differences are meaningless.

_probe = None


class KinkProbe:
    def __init__(self):
        self.margin = np.inf

    def report(self, values):
        if values.size:
            self.margin = min(self.margin, float(values.min()))


@contextlib.contextmanager
def kink_probe():
    global _probe
    previous, _probe = _probe, KinkProbe()
    try:
        yield _probe
    finally:
        _probe = previous


def _report_relu(z):
    if _probe is not None:
        a = np.abs(z[z != 0])
        _probe.report(a)


def _report_max(x, axis):
    # smallest nonzero gap between the largest and runner-up entries
    if _probe is None or x.shape[axis] < 2:
        return
    part = -np.partition(-x, 1, axis=axis)
    top = np.take(part, 0, axis=axis)
    second = np.take(part, 1, axis=axis)
    gap = top - second
    ok = np.isfinite(gap) & (gap > 0)
    _probe.report(gap[ok])


# --------------------------------------------------------------------------
# elementwise and structural ops


def _same_shape(a, b, name):
    if a.shape != b.shape:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x: Tensor, c: float) -> Tensor:
    return make_result(x.data * c, (x,), lambda g: (g * c,))


def mask_mul(x: Tensor, mask) -> Tensor:
    """Multiply by a constant array broadcastable to ``x``."""
    m = np.broadcast_to(np.asarray(mask, dtype=x.dtype), x.shape)
    return make_result(x.data * m, (x,), lambda g: (g * m,))


def relu(x: Tensor) -> Tensor:
    _report_relu(x.data)
    pos = x.data > 0
    return make_result(np.where(pos, x.data, 0).astype(x.dtype), (x,), lambda g: (g * pos,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D operands, or batched over one leading axis."""
    ok = (a.ndim == b.ndim and a.ndim in (2, 3)
          and a.shape[-1] == b.shape[-2]
          and (a.ndim == 2 or a.shape[0] == b.shape[0]))
    if not ok:
        raise DimensionError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return make_result(ad @ bd, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    return make_result(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(tensors, axis=-1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def _order_free_sum(a, axis, keepdims=False):
    # summing sorted values makes the result independent of input order
    if axis is None:
        return np.sort(a, axis=None).sum(keepdims=keepdims)
    return np.sort(a, axis=axis).sum(axis=axis, keepdims=keepdims)


def sum(x: Tensor, axis=None, keepdims=False, order_free=False) -> Tensor:  # noqa: A001
    """Sum over ``axis``; ``order_free`` makes the value invariant to permutations along it."""
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    total = _order_free_sum(x.data, axis, keepdims) if order_free else x.data.sum(axis=axis, keepdims=keepdims)
    return make_result(np.asarray(total), (x,), backward)


def take(x: Tensor, index) -> Tensor:
    """Gather rows of ``x`` along the first axis."""
    index = np.asarray(index, dtype=np.intp)
    n = x.shape[0]

    def backward(g):
        return (_segment_sum(g, index, n),)

    return make_result(x.data[index], (x,), backward)


def scatter_rows(x: Tensor, index, n: int) -> Tensor:
    """Place the rows of ``x`` at positions ``index`` of an ``n``-row zero array."""
    index = np.asarray(index, dtype=np.intp)
    if len(index) != x.shape[0]:
        raise DimensionError(f"scatter_rows: {len(index)} indices for {x.shape[0]} rows")
    out = np.zeros((n,) + x.shape[1:], dtype=x.dtype)
    out[index] = x.data
    return make_result(out, (x,), lambda g: (g[index],))


def _segment_sum(g, index, n):
    """Sum rows of ``g`` into ``n`` buckets given by ``index``."""
    out = np.zeros((n,) + g.shape[1:], dtype=g.dtype)
    if len(index) == 0:
        return out
    order = np.argsort(index, kind="stable")
    idx = index[order]
    starts = np.flatnonzero(np.r_[True, idx[1:] != idx[:-1]])
    out[idx[starts]] = np.add.reduceat(g[order], starts, axis=0)
    return out


def embedding(table: Tensor, ids, pad_id: int = 0) -> Tensor:
    """Look up rows of ``table``; the padding row never receives gradient."""
    ids = np.asarray(ids, dtype=np.intp)
    V, D = table.shape

    def backward(g):
        gt = _segment_sum(g.reshape(-1, D), ids.ravel(), V)
        gt[pad_id] = 0
        return (gt,)

    return make_result(table.data[ids], (table,), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight + bias`` over the last axis of ``x``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise DimensionError(
            f"linear: input {x.shape}, weight {weight.shape}, bias {bias.shape} do not line up")
    xd, wd = x.data, weight.data
    x2 = xd.reshape(-1, xd.shape[-1])

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        return (g2 @ wd.T).reshape(xd.shape), x2.T @ g2, g2.sum(axis=0)

    return make_result(xd @ wd + bias.data, (x, weight, bias), backward)


# --------------------------------------------------------------------------
# masked reductions


def _pool_mask(x, mask, axis):
    m = np.broadcast_to(np.asarray(mask).astype(bool), x.shape)
    if not m.any(axis=axis).all():
        raise EmptyPoolError("masked pooling over a slice with no valid position")
    return m


def masked_max(x: Tensor, mask, axis: int) -> Tensor:
    """Max over ``axis`` restricted to positions where ``mask`` is 1."""
    m = _pool_mask(x.data, mask, axis)
    xm = np.where(m, x.data, -np.inf)
    _report_max(xm, axis)
    arg = np.expand_dims(np.argmax(xm, axis=axis), axis)
    out = np.take_along_axis(x.data, arg, axis=axis).squeeze(axis)
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(gx, arg, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return make_result(out, (x,), backward)


def masked_mean(x: Tensor, mask, axis: int) -> Tensor:
    m = _pool_mask(x.data, mask, axis).astype(x.dtype)
    count = m.sum(axis=axis, keepdims=True)
    out = _order_free_sum(x.data * m, axis) / count.squeeze(axis)

    def backward(g):
        return (np.expand_dims(g, axis) * m / count,)

    return make_result(out, (x,), backward)


def masked_max_pool(x: Tensor, mask) -> Tensor:
    """Max over time: ``x`` is ``[..., L, F]``, ``mask`` is ``[..., L]``."""
    return masked_max(x, np.asarray(mask)[..., None], axis=-2)


def masked_mean_pool(x: Tensor, mask) -> Tensor:
    return masked_mean(x, np.asarray(mask)[..., None], axis=-2)


def masked_softmax(logits: Tensor, mask, axis: int = -1) -> Tensor:
    """Softmax over valid positions; masked positions come out exactly 0."""
    m = _pool_mask(logits.data, mask, axis)
    z = np.where(m, logits.data, -np.inf)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.where(m, np.exp(z), 0)
    p = (e / _order_free_sum(e, axis, keepdims=True)).astype(logits.dtype)

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return make_result(p, (logits,), backward)


# --------------------------------------------------------------------------
# regularisation and loss


def dropout(x: Tensor, rate: float, training: bool, rng=None) -> Tensor:
    """Inverted dropout: identity in eval mode."""
    if not 0 <= rate < 1:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0:
        return x
    if rng is None:
        raise ConfigurationError("training-mode dropout needs a seeded rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return make_result(x.data * keep, (x,), lambda g: (g * keep,))


def log_softmax(x):
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of two-class logits ``[B, 2]``."""
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[1] != 2 or len(labels) != logits.shape[0]:
        raise DimensionError(f"cross_entropy: logits {logits.shape} vs {len(labels)} labels")
    if not np.isin(labels, (0, 1)).all():
        raise LabelError(f"labels must be 0 or 1, got {sorted(set(labels.tolist()))}")
    labels = labels.astype(np.intp)
    B = len(labels)
    logp = log_softmax(logits.data)
    picked = logp[np.arange(B), labels]
    clamped = picked < np.log(PROB_FLOOR)
    nll = -np.maximum(picked, np.log(PROB_FLOOR))
    p = np.exp(logp)

    def backward(g):
        grad = p.copy()
        grad[np.arange(B), labels] -= 1.0
        grad[clamped] = 0
        return (grad * (g / B),)

    return make_result(np.asarray(nll.mean(), dtype=logits.dtype), (logits,), backward)


# --------------------------------------------------------------------------
# convolutions


def conv_text(x: Tensor, kernels: Tensor, bias: Tensor, mask) -> Tensor:
    """Same-padded 1-D convolution over token positions, followed by ReLU.

    ``x`` is ``[..., L, D]``, ``kernels`` is ``[F, w, D]`` with odd ``w``,
    ``mask`` is ``[..., L]``.  Masked positions read and emit zeros.
    """
    F, w, D = kernels.shape
    if w % 2 == 0:
        raise ConfigurationError(f"conv_text kernel width must be odd, got {w}")
    if x.shape[-1] != D:
        raise DimensionError(f"conv_text: input dim {x.shape[-1]} vs kernel dim {D}")
    if bias.shape != (F,):
        raise DimensionError(f"conv_text: bias {bias.shape} vs {F} filters")
    lead, L = x.shape[:-2], x.shape[-2]
    m = np.asarray(mask, dtype=x.dtype).reshape(-1, L)
    xd = x.data.reshape(-1, L, D) * m[..., None]
    pad = w // 2
    xp = np.pad(xd, ((0, 0), (pad, pad), (0, 0)))
    cols = sliding_window_view(xp, w, axis=1)            # [B, L, D, w]
    cols = cols.transpose(0, 1, 3, 2).reshape(-1, w * D)
    kf = kernels.data.reshape(F, w * D)
    z = (cols @ kf.T + bias.data).reshape(-1, L, F) * m[..., None]
    _report_relu(z)
    active = z > 0
    out = np.where(active, z, 0).astype(x.dtype)

    def backward(g):
        gz = g.reshape(-1, L, F) * active
        gflat = gz.reshape(-1, F)
        dk = (gflat.T @ cols).reshape(F, w, D)
        db = gflat.sum(axis=0)
        dcols = (gflat @ kf).reshape(-1, L, w, D)
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for j in range(w):
            dxp[:, j:j + L] += dcols[:, :, j]
        dx = dxp[:, pad:pad + L] * m[..., None]
        return dx.reshape(x.shape), dk, db

    return make_result(out.reshape(lead + (L, F)), (x, kernels, bias), backward)


def conv2d(x: Tensor, kernels: Tensor, bias: Tensor) -> Tensor:
    """Same-padded 2-D convolution, ``[B, C, H, W]`` -> ``[B, F, H, W]`` (no activation)."""
    if x.ndim != 4 or kernels.ndim != 4:
        raise DimensionError(f"conv2d: input {x.shape}, kernels {kernels.shape}")
    B, C, H, W = x.shape
    F, Ck, kh, kw = kernels.shape
    if Ck != C:
        raise DimensionError(f"conv2d: {C} input channels vs kernels {kernels.shape}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigurationError(f"conv2d kernel sides must be odd, got {kh}x{kw}")
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    cols = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # [B, C, H, W, kh, kw]
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(B * H * W, C * kh * kw)
    kf = kernels.data.reshape(F, -1)
    out = (cols @ kf.T + bias.data).reshape(B, H, W, F).transpose(0, 3, 1, 2)

    def backward(g):
        gflat = g.transpose(0, 2, 3, 1).reshape(-1, F)
        dk = (gflat.T @ cols).reshape(kernels.shape)
        db = gflat.sum(axis=0)
        dcols = (gflat @ kf).reshape(B, H, W, C, kh, kw)
        dxp = np.zeros(xp.shape, dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + H, j:j + W] += dcols[..., i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, ph:ph + H, pw:pw + W], dk, db

    return make_result(np.ascontiguousarray(out), (x, kernels, bias), backward)


def max_pool2d(x: Tensor, size: int = 2) -> Tensor:
    """Non-overlapping max pool; trailing rows/cols that do not fill a window are dropped."""
    B, F, H, W = x.shape
    H2, W2 = H // size, W // size
    if H2 == 0 or W2 == 0:
        raise DimensionError(f"max_pool2d: input {x.shape} smaller than pool size {size}")
    win = x.data[:, :, :H2 * size, :W2 * size].reshape(B, F, H2, size, W2, size)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(B, F, H2, W2, size * size)
    _report_max(win, -1)
    arg = np.argmax(win, axis=-1)[..., None]
    out = np.take_along_axis(win, arg, axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, arg, g[..., None], axis=-1)
        gw = gw.reshape(B, F, H2, W2, size, size).transpose(0, 1, 2, 4, 3, 5)
        gx = np.zeros(x.shape, dtype=g.dtype)
        gx[:, :, :H2 * size, :W2 * size] = gw.reshape(B, F, H2 * size, W2 * size)
        return (gx,)

    return make_result(out, (x,), backward)


def _pool_mask2d(mask, size=2):
    B, C, H, W = mask.shape
    H2, W2 = H // size, W // size
    win = mask[:, :, :H2 * size, :W2 * size].reshape(B, C, H2, size, W2, size)
    return win.max(axis=(3, 5))


def conv_grid(m: Tensor, stages, row_mask, col_mask, pool: int = 2) -> Tensor:
    """Stacked conv + ReLU + max-pool over a square interaction matrix.

    ``m`` is ``[B, L, L]``; ``stages`` is a sequence of ``(kernels, bias)``
    pairs, the first with one input channel.  Cells outside the valid
    rows/columns are zeroed after every convolution.  Output is the final
    feature maps flattened row-major (channel, row, column), ``[B, K]``.
    """
    if m.ndim != 3 or m.shape[1] != m.shape[2]:
        raise DimensionError(f"conv_grid needs square matrices, got {m.shape}")
    B, L, _ = m.shape
    cell = (np.asarray(row_mask, dtype=m.dtype)[:, :, None]
            * np.asarray(col_mask, dtype=m.dtype)[:, None, :])[:, None]
    x = reshape(m, (B, 1, L, L))
    for kernels, bias in stages:
        z = conv2d(x, kernels, bias)
        x = relu(mask_mul(z, np.broadcast_to(cell, z.shape)))
        x = max_pool2d(x, pool)
        cell = _pool_mask2d(cell, pool)
    return reshape(x, (B, -1))
