"""Neural-network primitives built on :mod:`arpgnet.numerics.tensor`."""

from __future__ import annotations

import numpy as np

from .tensor import DimensionError, Tensor, as_tensor, matmul, unbroadcast


class DegenerateRowError(ValueError):
    """A softmax row has no admissible entry."""


def leaky_relu(x, negative_slope: float = 0.01) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    slope = x.data.dtype.type(negative_slope)
    out = np.where(pos, x.data, slope * x.data)
    return Tensor._from_op(out, (x,), lambda g: (np.where(pos, g, slope * g),), "leaky_relu")


def prelu(x, slope) -> Tensor:
    """``max(x, a*x)`` with a learned slope ``a`` broadcast against ``x``."""
    x, a = as_tensor(x), as_tensor(slope)
    pos = x.data > 0
    out = np.where(pos, x.data, a.data * x.data)

    def grad_fn(g):
        gx = np.where(pos, g, a.data * g)
        ga = unbroadcast(np.where(pos, 0.0, x.data * g).astype(a.data.dtype), a.shape)
        return gx, ga

    return Tensor._from_op(out, (x, a), grad_fn, "prelu")


def masked_softmax(logits, mask) -> Tensor:
    """Softmax along the last axis restricted to entries where ``mask`` is true.

    Masked-out entries are exactly zero in the output and receive zero
    gradient. ``mask`` broadcasts against ``logits``.
    """
    logits = as_tensor(logits)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
    if not mask.any(axis=-1).all():
        rows = np.argwhere(~mask.any(axis=-1))
        raise DegenerateRowError(f"masked_softmax: row(s) {rows[:5].tolist()} have no unmasked entry")
    z = np.where(mask, logits.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0).astype(logits.dtype)
    out = e / e.sum(axis=-1, keepdims=True)

    def grad_fn(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(out, (logits,), grad_fn, "masked_softmax")


def softmax(x, axis: int = -1) -> np.ndarray:
    """Non-differentiable softmax helper for probabilities at inference."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x)
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def grad_fn(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), grad_fn, "log_softmax")


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    """Inverted dropout: survivors scaled by ``1/(1-rate)``; identity at eval."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout at train time needs an explicit rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return Tensor._from_op(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def linear(x, weight, bias=None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else out + bias


def _im2col(x: np.ndarray, k: int, stride: int, pad: int) -> tuple[np.ndarray, int, int]:
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # B, C, Ho, Wo, k, k
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(x.shape[0], ho, wo, -1)
    return cols, ho, wo


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. ``x``: (B, C, H, W); ``weight``: (O, C, k, k)."""
    x, w = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
        raise DimensionError(f"conv2d: input {x.shape} incompatible with weight {w.shape}")
    k = w.shape[2]
    cols, ho, wo = _im2col(x.data, k, stride, padding)
    wmat = w.data.reshape(w.shape[0], -1)
    out = (cols @ wmat.T).transpose(0, 3, 1, 2)
    parents: tuple = (x, w)
    if bias is not None:
        b = as_tensor(bias)
        out = out + b.data.reshape(1, -1, 1, 1)
        parents = (x, w, b)
    out = np.ascontiguousarray(out)

    def grad_fn(g):
        gt = g.transpose(0, 2, 3, 1)  # B, Ho, Wo, O
        gw = np.tensordot(gt, cols, axes=([0, 1, 2], [0, 1, 2])).reshape(w.shape)
        gcols = (gt @ wmat).reshape(x.shape[0], ho, wo, x.shape[1], k, k)
        hp, wp = x.shape[2] + 2 * padding, x.shape[3] + 2 * padding
        gxp = np.zeros((x.shape[0], x.shape[1], hp, wp), dtype=x.dtype)
        for di in range(k):
            for dj in range(k):
                gxp[:, :, di: di + stride * ho: stride, dj: dj + stride * wo: stride] += (
                    gcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
                )
        gx = gxp[:, :, padding: hp - padding, padding: wp - padding]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return Tensor._from_op(out, parents, grad_fn, "conv2d")


def adaptive_bins(size: int, out: int) -> list[tuple[int, int]]:
    """Split ``range(size)`` into ``out`` contiguous, non-overlapping bins."""
    if not 1 <= out <= size:
        raise DimensionError(f"cannot pool an extent of {size} into {out} bins")
    return [((i * size) // out, ((i + 1) * size) // out) for i in range(out)]


def pooling_matrix(size: int, out: int, dtype=np.float32) -> np.ndarray:
    m = np.zeros((out, size), dtype=dtype)
    for i, (lo, hi) in enumerate(adaptive_bins(size, out)):
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def adaptive_avg_pool2d(x, out_size: int) -> Tensor:
    """Average the last two axes of ``x`` over an ``out_size`` x ``out_size`` grid of bins."""
    x = as_tensor(x)
    if x.ndim < 2:
        raise DimensionError(f"adaptive_avg_pool2d needs at least 2 axes, got {x.shape}")
    ph = pooling_matrix(x.shape[-2], out_size, x.dtype)
    pw = pooling_matrix(x.shape[-1], out_size, x.dtype)
    return matmul(matmul(Tensor(ph), x), Tensor(pw.T))
