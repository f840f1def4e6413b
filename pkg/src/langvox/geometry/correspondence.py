"""Pixel-voxel correspondences under a metric distance threshold."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import DepthFrame, GeometryError, Intrinsics, Pose, pixels_to_camera, project_points
from .voxels import VoxelGrid

PAIR_DISTANCE = 0.02


@dataclass
class CorrespondenceSet:
    """``pairs[:, 0]`` is a flat feature-raster index ``row * raster_w + col``; ``pairs[:, 1]`` a voxel row."""

    pairs: np.ndarray
    raster_h: int
    raster_w: int
    distances: np.ndarray | None = None

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def pixels(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def voxels(self) -> np.ndarray:
        return self.pairs[:, 1]

    def validate(self, n_voxels: int) -> None:
        if len(self.pairs) == 0:
            return
        if self.pixels.min() < 0 or self.pixels.max() >= self.raster_h * self.raster_w:
            raise GeometryError("pixel index out of raster bounds")
        if self.voxels.min() < 0 or self.voxels.max() >= n_voxels:
            raise GeometryError("voxel index out of range")

    def as_set(self):
        return {(int(p), int(v)) for p, v in self.pairs}


SNAP_DECIMALS = 9     # pixel coordinates
TIE_DECIMALS = 12     # metres


def nearest_pixel(coord: np.ndarray) -> np.ndarray:
    """Round half up, so ``x.5`` always lands on the same neighbour.

    Coordinates are snapped to 1e-9 px first: a centroid midway between two
    pixel rays projects to x.5 only up to roundoff.
    """
    return np.floor(np.round(coord, SNAP_DECIMALS) + 0.5).astype(np.int64)


def compute_correspondences(grid: VoxelGrid, frame: DepthFrame, pose: Pose, intr: Intrinsics,
                            raster_h: int, raster_w: int, dist_thresh: float = PAIR_DISTANCE,
                            one_to_one: bool = True) -> CorrespondenceSet:
    """Match voxels to feature-raster cells through the depth frame.

    Each voxel centroid is projected to its nearest full-resolution pixel; the
    pair is kept when the back-projected depth point lies within
    ``dist_thresh`` metres of the centroid. The pixel is then pooled to its
    raster cell. With ``one_to_one`` each cell keeps its closest voxel.
    Distances are compared at picometre resolution, so voxels sitting on the
    surface up to roundoff tie and the lower voxel index wins.
    """
    if raster_h <= 0 or raster_w <= 0:
        raise GeometryError("feature raster must have positive extents")
    h, w = frame.shape
    if h % raster_h or w % raster_w:
        raise GeometryError(f"raster {raster_h}x{raster_w} does not divide image {h}x{w}")
    fy, fx = h // raster_h, w // raster_w
    if len(grid) == 0:
        return CorrespondenceSet(np.zeros((0, 2)), raster_h, raster_w, np.zeros(0))

    u, v, depth = project_points(grid.centroids, pose, intr)
    ok = depth > 0
    px = np.where(ok, nearest_pixel(np.where(ok, u, -1.0)), -1)
    py = np.where(ok, nearest_pixel(np.where(ok, v, -1.0)), -1)
    ok &= (px >= 0) & (px < w) & (py >= 0) & (py < h)
    vox = np.flatnonzero(ok)
    px, py = px[vox], py[vox]
    z = frame.values[py, px]
    valid = frame.valid[py, px]
    vox, px, py, z = vox[valid], px[valid], py[valid], z[valid]
    surface = pose.to_world(pixels_to_camera(intr, px, py, z)) if len(vox) else np.zeros((0, 3))
    dist = np.linalg.norm(grid.centroids[vox] - surface, axis=1)
    keep = dist <= dist_thresh
    vox, px, py, dist = vox[keep], px[keep], py[keep], dist[keep]
    cell = (py // fy) * raster_w + (px // fx)

    # sort by (cell, distance, voxel) so the first entry per cell is the winner
    order = np.lexsort((vox, np.round(dist, TIE_DECIMALS), cell))
    cell, vox, dist = cell[order], vox[order], dist[order]
    if one_to_one:
        first = np.ones(len(cell), dtype=bool)
        first[1:] = cell[1:] != cell[:-1]
        cell, vox, dist = cell[first], vox[first], dist[first]
    order = np.lexsort((vox, cell))
    return CorrespondenceSet(np.stack([cell[order], vox[order]], axis=1), raster_h, raster_w, dist[order])
