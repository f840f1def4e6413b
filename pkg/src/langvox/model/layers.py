"""Minimal parameter containers: linear, conv, batch-norm affine and attention."""

from __future__ import annotations

from typing import Iterator, List, Optional, Tuple

import numpy as np

from ..numerics import (
    Parameter,
    Tensor,
    batch_norm,
    concat,
    conv2d,
    linear,
    matmul,
    relu,
    softmax,
)


class Module:
    """Anything holding Parameters as attributes or in child Modules/lists."""

    def parameters(self) -> List[Parameter]:
        out: List[Parameter] = []
        for value in vars(self).values():
            out.extend(_collect(value))
        return out

    def freeze(self, frozen: bool = True) -> None:
        for p in self.parameters():
            p.freeze(frozen)


def _collect(value) -> Iterator[Parameter]:
    if isinstance(value, Parameter):
        yield value
    elif isinstance(value, Module):
        yield from value.parameters()
    elif isinstance(value, (list, tuple)):
        for item in value:
            yield from _collect(item)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, name: str, rng: np.random.Generator, bias: bool = True,
                 gain: float = 2.0):
        self.weight = Parameter(rng.standard_normal((n_in, n_out)) * np.sqrt(gain / n_in), name=f"{name}.w")
        self.bias = Parameter(np.zeros(n_out), name=f"{name}.b") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class Conv(Module):
    def __init__(self, c_in: int, c_out: int, name: str, rng: np.random.Generator, kernel: int = 3,
                 stride: int = 1):
        fan_in = c_in * kernel * kernel
        self.weight = Parameter(rng.standard_normal((c_out, c_in, kernel, kernel)) * np.sqrt(2.0 / fan_in),
                                name=f"{name}.w")
        self.bias = Parameter(np.zeros(c_out), name=f"{name}.b")
        self.stride = stride
        self.padding = kernel // 2

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Norm(Module):
    """Batch normalisation over rows with a learnable affine map."""

    def __init__(self, dim: int, name: str, min_rows: int = 2):
        self.gamma = Parameter(np.ones(dim), name=f"{name}.gamma")
        self.beta = Parameter(np.zeros(dim), name=f"{name}.beta")
        self.min_rows = min_rows

    def __call__(self, x: Tensor) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, min_rows=self.min_rows)


class MLP(Module):
    def __init__(self, dims, name: str, rng: np.random.Generator):
        self.layers = [Linear(a, b, f"{name}.{i}", rng) for i, (a, b) in enumerate(zip(dims[:-1], dims[1:]))]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = relu(x)
        return x


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tuple[Tensor, List[Tensor]]:
    """Scaled dot-product attention per head; returns the concatenated heads and the weights."""
    dim = q.shape[1]
    head_dim = dim // heads
    outs, weights = [], []
    for h in range(heads):
        cols = slice(h * head_dim, (h + 1) * head_dim)
        qh, kh, vh = q[:, cols], k[:, cols], v[:, cols]
        attn = softmax(matmul(qh, kh.T) * (1.0 / np.sqrt(head_dim)), axis=1)
        weights.append(attn)
        outs.append(matmul(attn, vh))
    return (outs[0] if heads == 1 else concat(outs, axis=1)), weights


class Attention(Module):
    """Query/key/value/output projections around multi-head attention."""

    def __init__(self, dim: int, name: str, rng: np.random.Generator, heads: int = 1):
        if dim % heads:
            raise ValueError(f"width {dim} is not divisible by {heads} heads")
        self.heads = heads
        self.w_q = Parameter(rng.standard_normal((dim, dim)) * np.sqrt(1.0 / dim), name=f"{name}.w_q")
        self.w_k = Parameter(rng.standard_normal((dim, dim)) * np.sqrt(1.0 / dim), name=f"{name}.w_k")
        self.w_v = Parameter(rng.standard_normal((dim, dim)) * np.sqrt(1.0 / dim), name=f"{name}.w_v")
        self.w_o = Parameter(rng.standard_normal((dim, dim)) * np.sqrt(1.0 / dim), name=f"{name}.w_o")
        self.last_weights: Optional[List[Tensor]] = None
        self.last_context: Optional[Tensor] = None

    def __call__(self, query: Tensor, context: Tensor) -> Tensor:
        out, self.last_weights = multi_head_attention(
            matmul(query, self.w_q), matmul(context, self.w_k), matmul(context, self.w_v), self.heads)
        self.last_context = out
        return matmul(out, self.w_o)
