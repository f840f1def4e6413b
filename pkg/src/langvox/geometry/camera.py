"""Pinhole camera model, rigid poses and depth back-projection.

Pixel ``(u, v)`` addresses column ``u`` and row ``v``; integer coordinates are
pixel centres. Poses map world coordinates into the camera frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np


class GeometryError(ValueError):
    pass


class BehindCameraError(GeometryError):
    pass


class PoseError(GeometryError):
    pass


@dataclass(frozen=True)
class Intrinsics:
    K: np.ndarray  # 3x4
    width: int
    height: int

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64)
        if K.shape == (3, 3):
            K = np.hstack([K, np.zeros((3, 1))])
        if K.shape != (3, 4):
            raise GeometryError(f"intrinsics must be 3x4, got {K.shape}")
        object.__setattr__(self, "K", K)
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError("principal point outside the image")

    @classmethod
    def from_params(cls, fx: float, fy: float, cx: float, cy: float, width: int, height: int) -> "Intrinsics":
        K = np.array([[fx, 0.0, cx, 0.0], [0.0, fy, cy, 0.0], [0.0, 0.0, 1.0, 0.0]])
        return cls(K, int(width), int(height))

    fx = property(lambda self: float(self.K[0, 0]))
    fy = property(lambda self: float(self.K[1, 1]))
    cx = property(lambda self: float(self.K[0, 2]))
    cy = property(lambda self: float(self.K[1, 2]))

    def scaled(self, factor: int) -> "Intrinsics":
        """Intrinsics of the same camera viewed at ``1/factor`` resolution."""
        return Intrinsics.from_params(self.fx / factor, self.fy / factor, (self.cx + 0.5) / factor - 0.5,
                                      (self.cy + 0.5) / factor - 0.5, self.width // factor, self.height // factor)


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform."""

    T: np.ndarray

    def __post_init__(self):
        T = np.asarray(self.T, dtype=np.float64)
        if T.shape != (4, 4):
            raise PoseError(f"pose must be 4x4, got {T.shape}")
        if not np.allclose(T[3], [0, 0, 0, 1], atol=1e-12, rtol=0):
            raise PoseError("pose bottom row must be [0, 0, 0, 1]")
        R = T[:3, :3]
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or np.linalg.det(R) <= 0:
            raise PoseError("pose rotation block is not a proper rotation")
        object.__setattr__(self, "T", T)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(4))

    @classmethod
    def from_matrix(cls, M, camera_to_world: bool = False) -> "Pose":
        """Build from a possibly low-precision rigid matrix, re-orthonormalising its rotation."""
        M = np.asarray(M, dtype=np.float64)
        if M.shape != (4, 4):
            raise PoseError(f"pose must be 4x4, got {M.shape}")
        u, sv, vt = np.linalg.svd(M[:3, :3])
        if np.abs(sv - 1).max() > 1e-3 or np.linalg.det(u @ vt) <= 0:
            raise PoseError("matrix is not a rigid transform")
        R, t = u @ vt, M[:3, 3]
        if camera_to_world:
            R, t = R.T, -R.T @ t
        T = np.eye(4)
        T[:3, :3], T[:3, 3] = R, t
        return cls(T)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> "Pose":
        """Camera at ``eye`` looking at ``target``; camera y points down the image."""
        eye, target, up = (np.asarray(v, dtype=np.float64) for v in (eye, target, up))
        z = target - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, up)
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(z, [0.0, 1.0, 0.0])
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        R = np.stack([x, y, z])
        T = np.eye(4)
        T[:3, :3] = R
        T[:3, 3] = -R @ eye
        return cls(T)

    def inverse_matrix(self) -> np.ndarray:
        R, t = self.T[:3, :3], self.T[:3, 3]
        inv = np.eye(4)
        inv[:3, :3] = R.T
        inv[:3, 3] = -R.T @ t
        return inv

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.T[:3, :3].T + self.T[:3, 3]

    def to_world(self, points: np.ndarray) -> np.ndarray:
        inv = self.inverse_matrix()
        return points @ inv[:3, :3].T + inv[:3, 3]


@dataclass
class DepthFrame:
    values: np.ndarray  # height x width, meters, 0 = invalid
    max_range: float = 10.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise GeometryError("depth frame must be 2-D")
        if np.any(~np.isfinite(self.values)) or np.any(self.values < 0):
            raise GeometryError("depth values must be finite and non-negative")

    @property
    def valid(self) -> np.ndarray:
        return (self.values > 0) & (self.values <= self.max_range)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass
class PointCloud:
    positions: np.ndarray
    colors: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    pixel_index: Optional[np.ndarray] = None  # flat source pixel per point, when back-projected

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        if not np.all(np.isfinite(self.positions)):
            raise GeometryError("point positions must be finite")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        for name in ("colors", "labels", "pixel_index"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise GeometryError(f"{name} has {len(arr)} rows, positions have {n}")

    def __len__(self) -> int:
        return len(self.positions)

    def transformed(self, M: np.ndarray) -> "PointCloud":
        pos = self.positions @ M[:3, :3].T + M[:3, 3]
        return PointCloud(pos, self.colors, self.labels, self.pixel_index)


def _solve_camera_point(K: np.ndarray, u: np.ndarray, v: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Camera-space points whose projection is ``(u, v)`` at camera depth ``z``.

    Solves ``K3 @ p + k4 = s * [u, v, 1]`` for ``(p_x, p_y, s)`` with ``p_z = z``.
    """
    K3, k4 = K[:, :3], K[:, 3]
    n = len(u)
    A = np.zeros((n, 3, 3))
    A[:, :, 0] = K3[:, 0]
    A[:, :, 1] = K3[:, 1]
    A[:, :, 2] = -np.stack([u, v, np.ones(n)], axis=1)
    rhs = -(np.outer(z, K3[:, 2]) + k4)
    sol = np.linalg.solve(A, rhs[..., None])[..., 0]
    return np.stack([sol[:, 0], sol[:, 1], z], axis=1)


def _canonical(K: np.ndarray) -> bool:
    return K[0, 1] == 0 and K[2, 0] == 0 and K[2, 1] == 0 and K[2, 2] == 1 and not np.any(K[:, 3])


def pixels_to_camera(intr: Intrinsics, u, v, z) -> np.ndarray:
    u, v, z = (np.asarray(a, dtype=np.float64).reshape(-1) for a in (u, v, z))
    if _canonical(intr.K):
        return np.stack([(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z], axis=1)
    return _solve_camera_point(intr.K, u, v, z)


def project_points(points: np.ndarray, pose: Pose, intr: Intrinsics):
    """Vectorised projection; returns ``(u, v, depth_cam)``. No front-of-camera check."""
    pc = pose.to_camera(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    hom = pc @ intr.K[:, :3].T + intr.K[:, 3]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = hom[:, 0] / hom[:, 2]
        v = hom[:, 1] / hom[:, 2]
    return u, v, pc[:, 2]


def project_world_to_pixel(p_world, pose: Pose, intr: Intrinsics) -> Tuple[float, float, float]:
    u, v, depth = project_points(np.asarray(p_world, dtype=np.float64).reshape(1, 3), pose, intr)
    if not depth[0] > 0:
        raise BehindCameraError(f"point lies behind the camera (depth {depth[0]:.4g})")
    return float(u[0]), float(v[0]), float(depth[0])


def back_project_pixel(u: float, v: float, depth: float, pose: Pose, intr: Intrinsics) -> np.ndarray:
    return pose.to_world(pixels_to_camera(intr, [u], [v], [depth]))[0]


def back_project_depth(frame: DepthFrame, pose: Pose, intr: Intrinsics, colors: Optional[np.ndarray] = None,
                       labels: Optional[np.ndarray] = None) -> PointCloud:
    """One world point per valid depth pixel, in row-major pixel order."""
    h, w = frame.shape
    flat = np.flatnonzero(frame.valid.reshape(-1))
    v, u = np.divmod(flat, w)
    z = frame.values.reshape(-1)[flat]
    pts = pose.to_world(pixels_to_camera(intr, u, v, z)) if len(flat) else np.zeros((0, 3))
    col = None if colors is None else np.asarray(colors, dtype=np.float64).reshape(h * w, 3)[flat]
    lab = None if labels is None else np.asarray(labels).reshape(-1)[flat]
    return PointCloud(pts, col, lab, flat)
