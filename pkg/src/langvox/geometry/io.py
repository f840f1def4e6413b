"""Readers and writers for poses, intrinsics and raw depth/colour rasters."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .camera import DepthFrame, GeometryError, Intrinsics, Pose

DEPTH_MAGIC = b"T4PD"
COLOR_MAGIC = b"T4PC"


class RasterFormatError(GeometryError):
    pass


def write_pose(path, pose: Pose | np.ndarray) -> None:
    T = pose.T if isinstance(pose, Pose) else np.asarray(pose)
    Path(path).write_text(" ".join(repr(float(x)) for x in T.reshape(-1)) + "\n")


def read_pose(path, camera_to_world: bool = False) -> Pose:
    values = Path(path).read_text().split()
    if len(values) != 16:
        raise RasterFormatError(f"{path}: expected 16 numbers, found {len(values)}")
    return Pose.from_matrix(np.array([float(x) for x in values]).reshape(4, 4), camera_to_world=camera_to_world)


def write_intrinsics(path, intr: Intrinsics) -> None:
    Path(path).write_text(f"{intr.fx!r} {intr.fy!r} {intr.cx!r} {intr.cy!r} {intr.width} {intr.height}\n")


def read_intrinsics(path) -> Intrinsics:
    parts = Path(path).read_text().split()
    if len(parts) != 6:
        raise RasterFormatError(f"{path}: expected 'fx fy cx cy width height'")
    fx, fy, cx, cy = (float(x) for x in parts[:4])
    return Intrinsics.from_params(fx, fy, cx, cy, int(parts[4]), int(parts[5]))


def _header(blob: bytes, magic: bytes, path) -> tuple:
    if len(blob) < 12 or blob[:4] != magic:
        raise RasterFormatError(f"{path}: bad raster header")
    return struct.unpack_from("<II", blob, 4)


def write_depth(path, depth: np.ndarray | DepthFrame) -> None:
    values = depth.values if isinstance(depth, DepthFrame) else np.asarray(depth)
    h, w = values.shape
    Path(path).write_bytes(DEPTH_MAGIC + struct.pack("<II", w, h) + values.astype("<f4").tobytes())


def read_depth(path, max_range: float = 10.0) -> DepthFrame:
    blob = Path(path).read_bytes()
    w, h = _header(blob, DEPTH_MAGIC, path)
    if len(blob) != 12 + 4 * w * h:
        raise RasterFormatError(f"{path}: depth payload has wrong size")
    values = np.frombuffer(blob, dtype="<f4", offset=12).reshape(h, w).astype(np.float64)
    return DepthFrame(values, max_range)


def write_color(path, rgb: np.ndarray) -> None:
    """``rgb`` is H x W x 3, either floats in [0, 1] or uint8."""
    rgb = np.asarray(rgb)
    if rgb.dtype != np.uint8:
        rgb = np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = rgb.shape
    Path(path).write_bytes(COLOR_MAGIC + struct.pack("<II", w, h) + rgb.tobytes())


def read_color(path) -> np.ndarray:
    """Returns H x W x 3 floats in [0, 1]."""
    blob = Path(path).read_bytes()
    w, h = _header(blob, COLOR_MAGIC, path)
    if len(blob) != 12 + 3 * w * h:
        raise RasterFormatError(f"{path}: colour payload has wrong size")
    return np.frombuffer(blob, dtype=np.uint8, offset=12).reshape(h, w, 3).astype(np.float64) / 255.0
