"""Training objectives: pair-level contrastive loss, score-map auxiliary loss, masked depth MAE."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional

import numpy as np

from .geometry import CorrespondenceSet, DepthFrame, radius_neighbors
from .geometry.voxels import mode_labels
from .numerics import (
    DegenerateError,
    ShapeError,
    Tensor,
    cosine_matrix,
    log_softmax,
    mean,
    tabs,
    take,
)

DEFAULT_TAU = 0.4
AUX_TEMPERATURE = 0.07


class EmptySetError(DegenerateError):
    """Raised when a loss would average over nothing; trainers treat it as a skipped term."""


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = DEFAULT_TAU
    applies_to: str = "encoder"

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.applies_to not in ("encoder", "decoder"):
            raise ValueError(f"unknown contrastive target {self.applies_to!r}")


@dataclass(frozen=True)
class AuxConfig:
    temperature: float = AUX_TEMPERATURE
    radius: Optional[float] = None  # None: use the voxel size
    weight: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.radius is not None and not self.radius > 0:
            raise ValueError("radius must be positive")


def pixel_voxel_contrastive(feat2d: Tensor, feat3d: Tensor, pairs: CorrespondenceSet,
                            tau: float = DEFAULT_TAU) -> Tensor:
    """Symmetric InfoNCE over the pairs in ``pairs``.

    ``feat2d`` holds one row per flat raster position, ``feat3d`` one row per
    voxel. Row ``a`` of the logit matrix is pair ``a``'s pixel against every
    pair's voxel, so negatives are the other members of the set.
    """
    if len(pairs) == 0:
        raise EmptySetError("correspondence set is empty")
    if not tau > 0:
        raise ValueError("temperature must be positive")
    a = take(feat2d, pairs.pixels)
    b = take(feat3d, pairs.voxels)
    logits = cosine_matrix(a, b) * (1.0 / tau)
    diag = (np.arange(len(pairs)), np.arange(len(pairs)))
    rows = take(log_softmax(logits, axis=1), diag)
    cols = take(log_softmax(logits, axis=0), diag)
    return -(mean(rows) + mean(cols))


def decoder_contrastive(z2d: Tensor, z3d: Tensor, pairs: CorrespondenceSet, tau: float = DEFAULT_TAU) -> Tensor:
    # same objective, on decoder features and the decoder-resolution pair set
    return pixel_voxel_contrastive(z2d, z3d, pairs, tau)


def score_map(h3d_expanded: Tensor, text: Tensor) -> Tensor:
    return cosine_matrix(h3d_expanded, text)


@dataclass
class PseudoLabels:
    labels: np.ndarray   # -1 where the row has no neighbours
    covered: np.ndarray  # bool mask

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def count(self) -> int:
        return int(self.covered.sum())


def assign_pseudo_labels(positions: np.ndarray, points: np.ndarray, point_labels: np.ndarray,
                         radius: float) -> PseudoLabels:
    """Mode of the labels of input points within ``radius`` of each row; ties go to the smaller id."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    point_labels = np.asarray(point_labels, dtype=np.int64)
    hits = radius_neighbors(np.asarray(positions, dtype=np.float64), np.asarray(points, dtype=np.float64), radius)
    counts = np.array([len(h) for h in hits], dtype=np.int64)
    covered = counts > 0
    labels = np.full(len(hits), -1, dtype=np.int64)
    if covered.any():
        groups = np.repeat(np.arange(len(hits)), counts)
        members = np.concatenate([h for h in hits if len(h)])
        modes = mode_labels(groups, point_labels[members], len(hits))
        labels[covered] = modes[covered]
    return PseudoLabels(labels, covered)


def auxiliary_loss(scores: Tensor, pseudo: PseudoLabels, temperature: float = AUX_TEMPERATURE) -> Tensor:
    """Mean softmax cross-entropy of ``scores / temperature`` over covered rows only."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    rows = np.flatnonzero(pseudo.covered)
    if len(rows) == 0:
        raise EmptySetError("no row has labelled neighbours")
    y = pseudo.labels[rows]
    if y.min() < 0 or y.max() >= scores.shape[1]:
        raise IndexError(f"pseudo labels must lie in [0, {scores.shape[1]})")
    logp = log_softmax(take(scores, rows) * (1.0 / temperature), axis=1)
    return -mean(take(logp, (np.arange(len(rows)), y)))


def pool_depth(depth: DepthFrame, height: int, width: int) -> DepthFrame:
    """Downsample by picking, per block, the valid pixel nearest the block centre."""
    h, w = depth.shape
    if h % height or w % width or h // height != w // width:
        raise ShapeError(f"depth {h}x{w} does not pool evenly to {height}x{width}")
    f = h // height
    blocks = depth.values.reshape(height, f, width, f).transpose(0, 2, 1, 3).reshape(height, width, f * f)
    valid = depth.valid.reshape(height, f, width, f).transpose(0, 2, 1, 3).reshape(height, width, f * f)
    centre = (f - 1) / 2.0
    dy, dx = np.divmod(np.arange(f * f), f)
    order = np.argsort((dy - centre) ** 2 + (dx - centre) ** 2, kind="stable")
    out = np.zeros((height, width))
    filled = np.zeros((height, width), dtype=bool)
    for k in order:
        take_k = valid[:, :, k] & ~filled
        out[take_k] = blocks[:, :, k][take_k]
        filled |= take_k
    return DepthFrame(out, depth.max_range)


def depth_loss(predicted: Tensor, target: DepthFrame) -> Tensor:
    """Mean absolute error over valid target pixels."""
    if predicted.shape != target.shape:
        target = pool_depth(target, *predicted.shape)
    mask = target.valid
    if not mask.any():
        raise EmptySetError("no valid depth pixels")
    idx = np.nonzero(mask)
    return mean(tabs(take(predicted, idx) - Tensor(target.values[idx])))


PRETRAIN_TERMS = ("encoder", "decoder", "depth")


def pretrain_total(terms: Mapping[str, Optional[Tensor]], weights: Optional[Mapping[str, float]] = None) -> Tensor:
    """Weighted sum of the present terms; ``None`` marks a skipped term."""
    weights = {} if weights is None else weights
    unknown = set(terms) - set(PRETRAIN_TERMS)
    if unknown:
        raise KeyError(f"unknown loss terms: {sorted(unknown)}")
    total = None
    for name in PRETRAIN_TERMS:
        term = terms.get(name)
        if term is None:
            continue
        part = term * float(weights.get(name, 1.0))
        total = part if total is None else total + part
    if total is None:
        raise EmptySetError("every loss term was skipped")
    return total


def term_values(terms: Dict[str, Optional[Tensor]]) -> Dict[str, Optional[float]]:
    return {k: (None if v is None else v.item()) for k, v in terms.items()}
