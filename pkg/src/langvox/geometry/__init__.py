from .camera import (
    BehindCameraError,
    DepthFrame,
    GeometryError,
    Intrinsics,
    PointCloud,
    Pose,
    PoseError,
    back_project_depth,
    back_project_pixel,
    pixels_to_camera,
    project_points,
    project_world_to_pixel,
)
from .voxels import VoxelGrid, cell_index, mode_labels, neighbor_mean_matrix, point_to_voxel, radius_neighbors, voxelize
from .correspondence import PAIR_DISTANCE, CorrespondenceSet, compute_correspondences, nearest_pixel
