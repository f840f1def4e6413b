"""2D-3D pair construction from RGB-D frames and scan directories."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from ..geometry import (
    CorrespondenceSet,
    DepthFrame,
    GeometryError,
    Intrinsics,
    PointCloud,
    Pose,
    PoseError,
    VoxelGrid,
    back_project_depth,
    compute_correspondences,
    voxelize,
)
from ..geometry import io as gio
from .synthetic import SyntheticScene

log = logging.getLogger(__name__)

LABEL_MAGIC = b"T4PL"
MIN_PAIRS = 32
ENCODER_FACTOR = 8
DECODER_FACTOR = 2
VOXEL_SIZE = 0.05


class IngestError(RuntimeError):
    pass


@dataclass
class PairSample:
    frame_id: int
    color: np.ndarray            # H x W x 3 in [0, 1]
    depth: DepthFrame
    pose: Pose
    intrinsics: Intrinsics
    cloud: PointCloud            # world space, labels when known
    grid: VoxelGrid
    pairs: CorrespondenceSet     # encoder-raster pairs
    decoder_pairs: CorrespondenceSet

    @property
    def has_labels(self) -> bool:
        return self.grid.labels is not None

    def validate(self) -> None:
        h, w = self.depth.shape
        for s, factor in ((self.pairs, ENCODER_FACTOR), (self.decoder_pairs, DECODER_FACTOR)):
            if (s.raster_h * factor, s.raster_w * factor) != (h, w):
                raise GeometryError(f"correspondence raster {s.raster_h}x{s.raster_w} does not match {h}x{w}")
            s.validate(len(self.grid))


@dataclass
class ScanSequence:
    root: Path
    frames: List[tuple] = field(default_factory=list)  # (color, depth, pose, label-or-None) paths
    intrinsics_path: Optional[Path] = None

    @property
    def scene_id(self) -> str:
        return self.root.name

    @classmethod
    def open(cls, root) -> "ScanSequence":
        root = Path(root)
        intr = root / "intrinsics.txt"
        if not intr.exists():
            raise IngestError(f"{root}: missing intrinsics.txt")
        frames = []
        for color in sorted((root / "color").glob("*.t4pc")):
            stem = color.stem
            label = root / "label" / f"{stem}.t4pl"
            frames.append((color, root / "depth" / f"{stem}.t4pd", root / "pose" / f"{stem}.txt",
                           label if label.exists() else None))
        return cls(root, frames, intr)


def write_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    h, w = labels.shape
    Path(path).write_bytes(LABEL_MAGIC + struct.pack("<II", w, h) + labels.astype("<i2").tobytes())


def read_labels(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != LABEL_MAGIC or len(blob) < 12:
        raise gio.RasterFormatError(f"{path}: not a label raster")
    w, h = struct.unpack_from("<II", blob, 4)
    if len(blob) != 12 + 2 * w * h:
        raise gio.RasterFormatError(f"{path}: size does not match header")
    return np.frombuffer(blob, dtype="<i2", offset=12).astype(np.int64).reshape(h, w)


def write_scan(scene: SyntheticScene, root) -> ScanSequence:
    """Lay a synthetic scene out as ``root/{color,depth,pose,label}/NNNN.*`` plus ``intrinsics.txt``."""
    root = Path(root)
    for sub in ("color", "depth", "pose", "label"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    gio.write_intrinsics(root / "intrinsics.txt", scene.intrinsics)
    for i in range(len(scene)):
        stem = f"{i:04d}"
        gio.write_color(root / "color" / f"{stem}.t4pc", scene.colors[i])
        gio.write_depth(root / "depth" / f"{stem}.t4pd", scene.depths[i])
        gio.write_pose(root / "pose" / f"{stem}.txt", scene.poses[i])
        write_labels(root / "label" / f"{stem}.t4pl", scene.labels[i])
    return ScanSequence.open(root)


def make_pair(frame_id: int, color: np.ndarray, depth: DepthFrame, pose: Pose, intr: Intrinsics,
              labels: Optional[np.ndarray] = None, voxel_size: float = VOXEL_SIZE) -> PairSample:
    h, w = depth.shape
    if h % ENCODER_FACTOR or w % ENCODER_FACTOR:
        raise GeometryError(f"frame {h}x{w} is not divisible by {ENCODER_FACTOR}")
    if labels is not None:
        # pixels that hit nothing have no depth either, so -1 never survives back-projection
        labels = np.asarray(labels)
    cloud = back_project_depth(depth, pose, intr, color, labels)
    grid = voxelize(cloud, voxel_size)
    enc = compute_correspondences(grid, depth, pose, intr, h // ENCODER_FACTOR, w // ENCODER_FACTOR)
    dec = compute_correspondences(grid, depth, pose, intr, h // DECODER_FACTOR, w // DECODER_FACTOR)
    return PairSample(frame_id, np.asarray(color, dtype=np.float64), depth, pose, intr, cloud, grid, enc, dec)


def _keep(sample: PairSample, min_pairs: int) -> bool:
    if len(sample.pairs) < min_pairs:
        log.warning("frame %d dropped: %d correspondences < %d", sample.frame_id, len(sample.pairs), min_pairs)
        return False
    return True


def ingest_scan(seq: ScanSequence, stride: int = 25, voxel_size: float = VOXEL_SIZE,
                min_pairs: int = MIN_PAIRS) -> List[PairSample]:
    """Frames 0, stride, 2*stride, ... as pair samples; sparse frames are dropped with a warning."""
    if stride < 1:
        raise ValueError("stride must be at least 1")
    try:
        intr = gio.read_intrinsics(seq.intrinsics_path)
    except (OSError, ValueError) as exc:
        raise IngestError(f"{seq.intrinsics_path}: {exc}") from exc
    out = []
    for idx in range(0, len(seq.frames), stride):
        color_p, depth_p, pose_p, label_p = seq.frames[idx]
        try:
            color = gio.read_color(color_p)
            depth = gio.read_depth(depth_p)
            pose = gio.read_pose(pose_p)
            labels = read_labels(label_p) if label_p is not None else None
        except PoseError:
            raise
        except (OSError, ValueError) as exc:
            raise IngestError(f"frame {idx} ({color_p.stem}): {exc}") from exc
        sample = make_pair(idx, color, depth, pose, intr, labels, voxel_size)
        if _keep(sample, min_pairs):
            out.append(sample)
    return out


def scene_samples(scene: SyntheticScene, stride: int = 1, voxel_size: float = VOXEL_SIZE,
                  min_pairs: int = MIN_PAIRS) -> List[PairSample]:
    """In-memory equivalent of writing the scene and ingesting it."""
    out = []
    for idx in range(0, len(scene), stride):
        sample = make_pair(idx, scene.colors[idx], scene.depths[idx], scene.poses[idx], scene.intrinsics,
                           scene.labels[idx], voxel_size)
        if _keep(sample, min_pairs):
            out.append(sample)
    return out


def frame_ids(samples: Sequence[PairSample]) -> List[int]:
    return [s.frame_id for s in samples]
