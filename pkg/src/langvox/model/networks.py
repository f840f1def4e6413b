"""Toy 2D/3D encoders and decoders, the text querying block and the aggregation gate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..geometry import VoxelGrid, neighbor_mean_matrix
from ..numerics import (
    Parameter,
    ShapeError,
    Tensor,
    concat,
    mean,
    relu,
    sparse_matmul,
    transpose,
    upsample_bilinear,
)
from ..numerics.tensor import reshape
from .layers import MLP, Attention, Conv, Linear, Module, Norm

DOWNSAMPLE_2D = 8


@dataclass
class Raster:
    """Feature raster stored as ``h*w`` row-major rows of width ``channels``."""

    rows: Tensor
    height: int
    width: int

    @property
    def channels(self) -> int:
        return self.rows.shape[1]

    def chw(self) -> Tensor:
        return reshape(transpose(self.rows), (self.channels, self.height, self.width))

    @classmethod
    def from_chw(cls, x: Tensor) -> "Raster":
        c, h, w = x.shape
        return cls(transpose(reshape(x, (c, h * w))), h, w)


def image_tensor(color: np.ndarray) -> Tensor:
    """H x W x 3 colours in [0, 1] to a constant 3 x H x W tensor."""
    return Tensor(np.ascontiguousarray(np.asarray(color, dtype=np.float64).transpose(2, 0, 1)))


class AttentionPool(Module):
    """Append the mean token, run one residual self-attention layer, split off the global token.

    The residual keeps per-position tokens distinct; without it a freshly
    initialised layer averages every position into nearly the same vector.
    """

    def __init__(self, dim: int, name: str, rng: np.random.Generator, heads: int = 1):
        self.attn = Attention(dim, name, rng, heads)

    def __call__(self, x: Tensor) -> Tuple[Tensor, Tensor]:
        n = x.shape[0]
        tokens = concat([x, mean(x, axis=0, keepdims=True)], axis=0)
        out = tokens + self.attn(tokens, tokens)
        return out[:n], out[n:]


class Encoder2D(Module):
    """Three stride-2 convolutions (factor 8), optionally followed by attention pooling."""

    def __init__(self, dim: int, rng: np.random.Generator, channels=(8, 16), attention_pool: bool = True,
                 heads: int = 1, frozen: bool = True, name: str = "enc2d"):
        c1, c2 = channels
        self.convs = [Conv(3, c1, f"{name}.conv0", rng, stride=2), Conv(c1, c2, f"{name}.conv1", rng, stride=2),
                      Conv(c2, dim, f"{name}.conv2", rng, stride=2)]
        self.pool = AttentionPool(dim, f"{name}.pool", rng, heads) if attention_pool else None
        self.dim = dim
        self.freeze(frozen)

    def features(self, color: np.ndarray) -> Raster:
        h, w = color.shape[:2]
        if h % DOWNSAMPLE_2D or w % DOWNSAMPLE_2D:
            raise ShapeError(f"image extents {h}x{w} must be divisible by {DOWNSAMPLE_2D}")
        x = image_tensor(color)
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.convs) - 1:
                x = relu(x)
        return Raster.from_chw(x)

    def __call__(self, color: np.ndarray) -> Raster:
        raster = self.features(color)
        if self.pool is not None:
            tokens, _ = self.pool(raster.rows)
            raster = Raster(tokens, raster.height, raster.width)
        return raster


class Decoder2D(Module):
    """Bilinear x2 upsampling + 3x3 conv stages, then a linear per-pixel depth head."""

    def __init__(self, dim: int, out_dim: int, rng: np.random.Generator, stages: int = 2, name: str = "dec2d"):
        widths = [dim] + [out_dim] * stages
        self.convs = [Conv(a, b, f"{name}.conv{i}", rng) for i, (a, b) in enumerate(zip(widths[:-1], widths[1:]))]
        self.depth_head = Conv(out_dim, 1, f"{name}.depth", rng, kernel=1)

    def __call__(self, h2d: Raster) -> Raster:
        x = h2d.chw()
        for i, conv in enumerate(self.convs):
            x = conv(upsample_bilinear(x, 2))
            if i < len(self.convs) - 1:
                x = relu(x)
        return Raster.from_chw(x)

    def depth(self, z2d: Raster) -> Tensor:
        """Predicted depth raster (H x W)."""
        out = self.depth_head(z2d.chw())
        return reshape(out, (z2d.height, z2d.width))


@dataclass
class VoxelInput:
    """Per-voxel input features plus the fixed neighbourhood-averaging operator."""

    features: np.ndarray  # N x 6: mean colour, centroid offset within the cell
    mean_matrix: object   # sparse N x N, row-stochastic
    positions: np.ndarray

    def __len__(self) -> int:
        return len(self.features)


def voxel_input(grid: VoxelGrid, radius: Optional[float] = None) -> VoxelInput:
    radius = 2 * grid.voxel_size if radius is None else radius
    colors = grid.colors if grid.colors is not None else np.zeros((len(grid), 3))
    offsets = (grid.centroids - grid.origin) / grid.voxel_size - grid.cells
    feats = np.hstack([colors, offsets])
    return VoxelInput(feats, neighbor_mean_matrix(grid.centroids, radius), grid.centroids)


class Encoder3D(Module):
    """Per-voxel MLP with ``rounds`` of radius-mean neighbourhood mixing."""

    def __init__(self, out_dim: int, rng: np.random.Generator, in_dim: int = 6, hidden: int = 32, rounds: int = 2,
                 name: str = "enc3d"):
        self.stem = Linear(in_dim, hidden, f"{name}.stem", rng)
        self.mix = [Linear(2 * hidden, hidden, f"{name}.mix{i}", rng) for i in range(rounds)]
        self.out = Linear(hidden, out_dim, f"{name}.out", rng, gain=1.0)

    def __call__(self, voxels: VoxelInput) -> Tensor:
        h = relu(self.stem(Tensor(voxels.features)))
        for layer in self.mix:
            h = relu(layer(concat([h, sparse_matmul(voxels.mean_matrix, h)], axis=1)))
        return self.out(h)


class TextQuery(Module):
    """3D features attend over class embeddings; Norm + MLP on the attended result."""

    def __init__(self, dim: int, rng: np.random.Generator, heads: int = 1, hidden_mult: int = 4, name: str = "tqm"):
        self.norm_3d = Norm(dim, f"{name}.norm_3d")
        self.norm_text = Norm(dim, f"{name}.norm_text", min_rows=1)
        self.attn = Attention(dim, name, rng, heads)
        self.norm_attn = Norm(dim, f"{name}.norm_attn")
        self.mlp = MLP([dim, hidden_mult * dim, dim], f"{name}.mlp", rng)

    def __call__(self, h3d_expanded: Tensor, text: Tensor) -> Tensor:
        if text.shape[1] != h3d_expanded.shape[1]:
            raise ShapeError(f"text width {text.shape[1]} != feature width {h3d_expanded.shape[1]}")
        q = self.norm_3d(h3d_expanded)
        kv = self.norm_text(text)
        attended = self.attn(q, kv)
        return self.mlp(self.norm_attn(attended))

    @property
    def attention_weights(self):
        return self.attn.last_weights


class Gate(Module):
    def __init__(self, name: str = "gate", alpha: float = 1.0, beta: float = 0.0):
        self.alpha = Parameter(np.array([alpha]), name=f"{name}.alpha")
        self.beta = Parameter(np.array([beta]), name=f"{name}.beta")


class Decoder3D(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, name: str = "dec3d"):
        self.mlp = MLP([in_dim, out_dim, out_dim], name, rng)

    def __call__(self, h: Tensor) -> Tensor:
        return self.mlp(h)
