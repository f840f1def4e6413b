"""Voxel grids and exact radius neighbour queries on a uniform hash grid."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy import sparse

from .camera import GeometryError, PointCloud


@dataclass
class VoxelGrid:
    voxel_size: float
    origin: np.ndarray
    cells: np.ndarray       # M x 3 int64, lexicographically sorted, unique
    centroids: np.ndarray   # M x 3
    counts: np.ndarray      # M
    colors: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.cells)

    def permuted(self, order) -> "VoxelGrid":
        """Same voxels in a different row order (breaks the sorted-cells convention on purpose)."""
        order = np.asarray(order)
        pick = lambda a: None if a is None else a[order]
        return VoxelGrid(self.voxel_size, self.origin, self.cells[order], self.centroids[order],
                         self.counts[order], pick(self.colors), pick(self.labels))


def cell_index(points: np.ndarray, voxel_size: float, origin=None) -> np.ndarray:
    origin = np.zeros(3) if origin is None else np.asarray(origin, dtype=np.float64)
    return np.floor((np.asarray(points) - origin) / voxel_size).astype(np.int64)


def mode_labels(groups: np.ndarray, labels: np.ndarray, n_groups: int) -> np.ndarray:
    """Per-group most frequent label; ties go to the smallest label id."""
    if len(labels) == 0:
        return np.zeros(n_groups, dtype=np.int64)
    lo = labels.min()
    shifted = labels - lo
    n_labels = int(shifted.max()) + 1
    table = np.bincount(groups * n_labels + shifted, minlength=n_groups * n_labels).reshape(n_groups, n_labels)
    return table.argmax(axis=1).astype(np.int64) + lo


def voxelize(cloud: PointCloud, voxel_size: float, origin=None) -> VoxelGrid:
    if not voxel_size > 0:
        raise GeometryError("voxel_size must be positive")
    origin = np.zeros(3) if origin is None else np.asarray(origin, dtype=np.float64)
    if len(cloud) == 0:
        return VoxelGrid(voxel_size, origin, np.zeros((0, 3), np.int64), np.zeros((0, 3)), np.zeros(0, np.int64),
                         None if cloud.colors is None else np.zeros((0, 3)),
                         None if cloud.labels is None else np.zeros(0, np.int64))
    keys = cell_index(cloud.positions, voxel_size, origin)
    cells, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    m = len(cells)

    def group_mean(values):
        out = np.zeros((m, values.shape[1]))
        np.add.at(out, inverse, values)
        return out / counts[:, None]

    centroids = group_mean(cloud.positions)
    colors = None if cloud.colors is None else group_mean(cloud.colors)
    labels = None if cloud.labels is None else mode_labels(inverse, cloud.labels, m)
    return VoxelGrid(voxel_size, origin, cells, centroids, counts, colors, labels)


def point_to_voxel(cloud: PointCloud, grid: VoxelGrid) -> np.ndarray:
    """Row of ``grid`` holding each point of ``cloud`` (-1 when the cell is unoccupied)."""
    keys = cell_index(cloud.positions, grid.voxel_size, grid.origin)
    lookup = {tuple(c): i for i, c in enumerate(grid.cells.tolist())}
    return np.array([lookup.get(tuple(k), -1) for k in keys.tolist()], dtype=np.int64)


def radius_neighbors(query: np.ndarray, reference: np.ndarray, radius: float) -> List[np.ndarray]:
    """Indices of reference points within ``radius`` (inclusive) of each query, ascending."""
    if not radius > 0:
        raise GeometryError("radius must be positive")
    query = np.asarray(query, dtype=np.float64).reshape(-1, 3)
    reference = np.asarray(reference, dtype=np.float64).reshape(-1, 3)
    buckets = defaultdict(list)
    for idx, key in enumerate(np.floor(reference / radius).astype(np.int64).tolist()):
        buckets[tuple(key)].append(idx)
    buckets = {k: np.array(v, dtype=np.int64) for k, v in buckets.items()}
    offsets = [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)]
    r2 = radius * radius
    empty = np.zeros(0, dtype=np.int64)
    out = []
    for q, key in zip(query, np.floor(query / radius).astype(np.int64).tolist()):
        cells = ((key[0] + dx, key[1] + dy, key[2] + dz) for dx, dy, dz in offsets)
        cand = [buckets[cell] for cell in cells if cell in buckets]
        if not cand:
            out.append(empty)
            continue
        cand = np.concatenate(cand)
        d2 = ((reference[cand] - q) ** 2).sum(axis=1)
        out.append(np.sort(cand[d2 <= r2]))
    return out


def neighbor_mean_matrix(positions: np.ndarray, radius: float) -> sparse.csr_matrix:
    """Sparse row-stochastic matrix averaging each point over its radius neighbourhood (itself included)."""
    nbrs = radius_neighbors(positions, positions, radius)
    rows = np.repeat(np.arange(len(nbrs)), [len(x) for x in nbrs])
    cols = np.concatenate(nbrs) if nbrs else np.zeros(0, np.int64)
    vals = np.concatenate([np.full(len(x), 1.0 / len(x)) for x in nbrs]) if nbrs else np.zeros(0)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(len(nbrs), len(nbrs)))
