"""Differentiable building blocks on top of :mod:`tensor`."""

from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _make, as_tensor, exp, log, matmul, mean, sqrt, take, tsum

BN_EPS = 1e-5


class DegenerateError(ValueError):
    """Input has no meaningful statistics (zero norm, batch too small, empty set)."""


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), backward, "log_softmax")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = BN_EPS, min_rows: int = 2) -> Tensor:
    """Normalise each column of an ``n x d`` matrix with batch statistics.

    ``min_rows=1`` admits a single row, which normalises to zero before the
    affine map (the variance floor ``eps`` keeps it finite).
    """
    if x.ndim != 2:
        raise ShapeError(f"batch_norm expects n x d input, got {x.shape}")
    if x.shape[0] < min_rows:
        raise DegenerateError(f"batch_norm needs at least {min_rows} rows, got {x.shape[0]}")
    centered = x - mean(x, axis=0, keepdims=True)
    var = mean(centered * centered, axis=0, keepdims=True)
    return centered / sqrt(var + eps) * gamma + beta


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    norms = np.sqrt((x.data ** 2).sum(axis=axis))
    if np.any(norms == 0):
        raise DegenerateError("cannot normalise a zero-norm vector")
    return x / sqrt(tsum(x * x, axis=axis, keepdims=True))


def cosine_sim(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"cosine_sim expects two d-vectors, got {a.shape} and {b.shape}")
    return tsum(l2_normalize(a) * l2_normalize(b))


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    """Pairwise cosine similarities between the rows of ``a`` and ``b``."""
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"row widths differ: {a.shape[1]} vs {b.shape[1]}")
    return matmul(l2_normalize(a, axis=1), l2_normalize(b, axis=1).T)


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise IndexError(f"labels must lie in [0, {k})")
    logp = log_softmax(logits, axis=1)
    return -mean(take(logp, (np.arange(n), labels)))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    out = matmul(x, weight)
    return out if bias is None else out + bias


def sparse_matmul(a, x: Tensor) -> Tensor:
    """Constant sparse (or dense) matrix times a tracked dense matrix."""
    return _make(np.asarray(a @ x.data), (x,), lambda g: (np.asarray(a.T @ g),), "sparse_matmul")


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Single-image convolution. ``x`` is C x H x W, ``weight`` is O x C x k x k."""
    c, h, w = x.shape
    o, c2, k, k2 = weight.shape
    if c != c2 or k != k2:
        raise ShapeError(f"conv2d weight {weight.shape} incompatible with input {x.shape}")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = windows.shape[1], windows.shape[2]
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(c * k * k, ho * wo)
    w2 = weight.data.reshape(o, -1)
    out = (w2 @ cols).reshape(o, ho, wo)

    def backward(g):
        g2 = g.reshape(o, -1)
        gw = (g2 @ cols.T).reshape(weight.shape)
        dcols = (w2.T @ g2).reshape(c, k, k, ho, wo)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j]
        gx = dxp[:, padding:padding + h, padding:padding + w]
        return gx, gw

    result = _make(out, (x, weight), backward, "conv2d")
    if bias is not None:
        result = result + bias.reshape(o, 1, 1)
    return result


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for dst in range(n_out):
        src = min(max((dst + 0.5) * scale - 0.5, 0.0), n_in - 1)
        i0 = int(np.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[dst, i0] += 1.0 - frac
        m[dst, i1] += frac
    return m


def upsample_bilinear(x: Tensor, factor: int = 2) -> Tensor:
    """Bilinear resize of a C x H x W raster (half-pixel centres, edge clamp)."""
    _, h, w = x.shape
    ay = _interp_matrix(h, h * factor)
    ax = _interp_matrix(w, w * factor)
    out = np.einsum("yh,chw,xw->cyx", ay, x.data, ax)
    return _make(out, (x,), lambda g: (np.einsum("yh,cyx,xw->chw", ay, g, ax),), "upsample")


__all__ = [
    "DegenerateError", "softmax", "log_softmax", "batch_norm", "l2_normalize", "cosine_sim",
    "cosine_matrix", "cross_entropy", "linear", "sparse_matmul", "conv2d", "upsample_bilinear", "exp", "log",
]
