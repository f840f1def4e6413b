"""Seeded toy rooms made of planes, boxes and spheres, rendered by ray casting."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..geometry import DepthFrame, Intrinsics, Pose

PLANE_CLASSES = ("floor", "wall", "ceiling")
NO_HIT = -1


class PlacementError(RuntimeError):
    pass


@dataclass(frozen=True)
class Primitive:
    kind: str               # plane | box | sphere
    label: int
    color: Tuple[float, float, float]
    a: Tuple[float, ...]    # plane normal / box min corner / sphere centre
    b: Tuple[float, ...]    # plane offset (1-tuple) / box max corner / sphere radius (1-tuple)

    def intersect(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Ray parameter of the first hit in front of ``origin`` (inf where missed)."""
        a, b = np.asarray(self.a), np.asarray(self.b)
        with np.errstate(divide="ignore", invalid="ignore"):
            if self.kind == "plane":
                denom = dirs @ a
                t = (b[0] - origin @ a) / denom
            elif self.kind == "sphere":
                oc = origin - a
                qa = np.einsum("ij,ij->i", dirs, dirs)
                qb = 2.0 * dirs @ oc
                disc = qb * qb - 4.0 * qa * (oc @ oc - b[0] ** 2)
                root = np.sqrt(np.where(disc >= 0, disc, np.nan))
                near, far = (-qb - root) / (2 * qa), (-qb + root) / (2 * qa)
                t = np.where(near > 0, near, far)
            elif self.kind == "box":
                lo, hi = (a - origin) / dirs, (b - origin) / dirs
                t_near = np.nanmax(np.minimum(lo, hi), axis=1)
                t_far = np.nanmin(np.maximum(lo, hi), axis=1)
                t = np.where(t_near <= t_far, np.where(t_near > 0, t_near, t_far), np.nan)
            else:
                raise ValueError(f"unknown primitive {self.kind!r}")
        t = np.where(np.isfinite(t) & (t > 1e-9), t, np.inf)
        return t

    def contains_surface(self, p: np.ndarray, tol: float = 1e-6) -> np.ndarray:
        a, b = np.asarray(self.a), np.asarray(self.b)
        if self.kind == "plane":
            return np.abs(p @ a - b[0]) <= tol
        if self.kind == "sphere":
            return np.abs(np.linalg.norm(p - a, axis=1) - b[0]) <= tol
        inside = np.all((p >= a - tol) & (p <= b + tol), axis=1)
        on_face = np.any((np.abs(p - a) <= tol) | (np.abs(p - b) <= tol), axis=1)
        return inside & on_face


@dataclass(frozen=True)
class SyntheticSceneSpec:
    classes: Tuple[str, ...] = ("floor", "wall", "chair", "table")
    seed: int = 0
    room: Tuple[float, float, float] = (4.0, 4.0, 2.5)
    objects_per_class: int = 2
    frames: int = 8
    orbit_radius: float = 1.4
    camera_height: float = 1.5
    target_height: float = 0.3
    depth_noise: float = 0.0
    width: int = 64
    height: int = 48
    focal: float = 48.0
    max_range: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if len(self.classes) < 1 or len(set(self.classes)) != len(self.classes):
            raise ValueError("class names must be unique and non-empty")
        if self.frames < 1:
            raise ValueError("frame count must be at least 1")
        if self.orbit_radius >= min(self.room[:2]) / 2:
            raise ValueError("camera orbit leaves the room")


@dataclass
class SyntheticScene:
    spec: SyntheticSceneSpec
    intrinsics: Intrinsics
    primitives: List[Primitive]
    poses: List[Pose] = field(default_factory=list)
    colors: List[np.ndarray] = field(default_factory=list)
    depths: List[DepthFrame] = field(default_factory=list)
    labels: List[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.poses)


def class_color(name: str) -> np.ndarray:
    """Base colour keyed on the class name, so it is shared by every scene."""
    return np.random.default_rng(zlib.crc32(name.encode("utf-8"))).uniform(0.1, 0.9, 3)


def _room_planes(spec: SyntheticSceneSpec, colors) -> List[Primitive]:
    sx, sy, sz = spec.room[0] / 2, spec.room[1] / 2, spec.room[2]
    out = []
    for name, label in ((n, i) for i, n in enumerate(spec.classes) if n in PLANE_CLASSES):
        col = tuple(colors[label])
        if name == "floor":
            out.append(Primitive("plane", label, col, (0.0, 0.0, 1.0), (0.0,)))
        elif name == "ceiling":
            out.append(Primitive("plane", label, col, (0.0, 0.0, 1.0), (sz,)))
        else:
            for normal, off in (((1.0, 0, 0), sx), ((1.0, 0, 0), -sx), ((0, 1.0, 0), sy), ((0, 1.0, 0), -sy)):
                out.append(Primitive("plane", label, col, normal, (off,)))
    return out


def _place_objects(spec: SyntheticSceneSpec, rng: np.random.Generator, colors) -> List[Primitive]:
    half = np.array(spec.room[:2]) / 2
    ceiling = min(spec.camera_height - 0.3, spec.room[2])
    placed: List[Tuple[np.ndarray, float]] = []
    out = []
    for label, name in enumerate(spec.classes):
        if name in PLANE_CLASSES:
            continue
        # per-class size and shape so classes differ in geometry as well as colour
        kind = "box" if label % 2 == 0 else "sphere"
        size = 0.25 + 0.1 * (label % 3)
        for _ in range(spec.objects_per_class):
            for _attempt in range(1000):
                centre = rng.uniform(-half + size + 0.05, half - size - 0.05)
                if all(np.linalg.norm(centre - c) > size + r + 0.05 for c, r in placed):
                    break
            else:
                raise PlacementError(f"could not place a {name!r} without overlap after 1000 attempts")
            placed.append((centre, size))
            col = tuple(np.clip(colors[label] + rng.normal(0, 0.03, 3), 0, 1))
            if kind == "box":
                height = min(2 * size, ceiling)
                lo = (centre[0] - size / np.sqrt(2), centre[1] - size / np.sqrt(2), 0.0)
                hi = (centre[0] + size / np.sqrt(2), centre[1] + size / np.sqrt(2), height)
                out.append(Primitive("box", label, col, tuple(map(float, lo)), tuple(map(float, hi))))
            else:
                out.append(Primitive("sphere", label, col, (float(centre[0]), float(centre[1]), size), (size,)))
    return out


def camera_rays(pose: Pose, intr: Intrinsics) -> Tuple[np.ndarray, np.ndarray]:
    """Camera centre and per-pixel world directions scaled so that t equals camera depth."""
    v, u = np.divmod(np.arange(intr.height * intr.width), intr.width)
    cam = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones(len(u))], axis=1)
    inv = pose.inverse_matrix()
    return inv[:3, 3].copy(), cam @ inv[:3, :3].T


def render_frame(primitives: Sequence[Primitive], pose: Pose, intr: Intrinsics, noise: float = 0.0,
                 rng: Optional[np.random.Generator] = None, max_range: float = 10.0):
    """Ray-cast one view; returns (color HxWx3, DepthFrame, labels HxW with -1 for no hit)."""
    origin, dirs = camera_rays(pose, intr)
    n = len(dirs)
    best = np.full(n, np.inf)
    owner = np.full(n, -1)
    for i, prim in enumerate(primitives):
        t = prim.intersect(origin, dirs)
        closer = t < best
        best[closer] = t[closer]
        owner[closer] = i
    hit = np.isfinite(best) & (best <= max_range)
    depth = np.where(hit, best, 0.0)
    if noise > 0 and rng is not None:
        jitter = rng.normal(0.0, noise, n)
        depth = np.where(hit, np.maximum(depth + jitter, 1e-3), 0.0)
    table_col = np.array([p.color for p in primitives] + [(0.0, 0.0, 0.0)])
    table_lab = np.array([p.label for p in primitives] + [NO_HIT])
    colors = table_col[np.where(hit, owner, -1)]
    labels = table_lab[np.where(hit, owner, -1)]
    h, w = intr.height, intr.width
    return colors.reshape(h, w, 3), DepthFrame(depth.reshape(h, w), max_range), labels.reshape(h, w)


def generate_synthetic_scene(spec: SyntheticSceneSpec) -> SyntheticScene:
    rng = np.random.default_rng(spec.seed)
    colors = [class_color(name) for name in spec.classes]
    prims = _room_planes(spec, colors) + _place_objects(spec, rng, colors)
    intr = Intrinsics.from_params(spec.focal, spec.focal, (spec.width - 1) / 2, (spec.height - 1) / 2,
                                  spec.width, spec.height)
    scene = SyntheticScene(spec, intr, prims)
    phase = rng.uniform(0, 2 * np.pi)
    for k in range(spec.frames):
        angle = phase + 2 * np.pi * k / spec.frames
        eye = (spec.orbit_radius * np.cos(angle), spec.orbit_radius * np.sin(angle), spec.camera_height)
        # look across the room at the far side so each view sees floor, walls and objects
        target = (-0.5 * eye[0], -0.5 * eye[1], spec.target_height)
        pose = Pose.look_at(eye, target)
        col, depth, lab = render_frame(prims, pose, intr, spec.depth_noise, rng, spec.max_range)
        scene.poses.append(pose)
        scene.colors.append(col)
        scene.depths.append(depth)
        scene.labels.append(lab)
    return scene
