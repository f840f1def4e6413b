"""
From a rendered room to pixel-voxel pairs
=========================================

Render one synthetic room, lift a frame into a labelled point cloud,
voxelize it and look at which voxels land on which feature cells.
"""

import numpy as np

from langvox.dataset import SyntheticSceneSpec, generate_synthetic_scene
from langvox.geometry import back_project_depth, compute_correspondences, voxelize

classes = ("floor", "wall", "chair", "table")
scene = generate_synthetic_scene(SyntheticSceneSpec(classes=classes, seed=3, frames=2))
depth, pose, intr = scene.depths[0], scene.poses[0], scene.intrinsics
print("frame", depth.shape, "valid depth pixels:", int(depth.valid.sum()))

# every valid depth pixel becomes one world point, carrying its label
cloud = back_project_depth(depth, pose, intr, scene.colors[0], scene.labels[0])
print("points:", len(cloud), "per class:", np.bincount(cloud.labels, minlength=len(classes)))

# 5 cm voxels; each voxel takes the mode of its point labels
grid = voxelize(cloud, 0.05)
print("voxels:", len(grid.centroids))

# pairs are 1:1, and only when the depth surface is within 2 cm of the voxel
h, w = depth.shape
pairs = compute_correspondences(grid, depth, pose, intr, h // 8, w // 8)
print("pairs on the 1/8 raster:", len(pairs))
print("largest surface gap (m): %.4f" % pairs.distances.max())
