"""Binary dataset container: header, manifest, then one block per sample.

Layout (little endian)::

    b"T4PS"  u32 version
    u32 class_count, then per class u32 length + UTF-8 name
    f64 voxel_size, u32 sample_count, sample_count x u64 offset, u32 crc32
    sample blocks

Offsets are absolute and strictly increasing; the CRC covers every byte
after the manifest. Each sample block is a u32 array count followed by
named ``.npy`` payloads.
"""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from ..geometry import CorrespondenceSet, DepthFrame, Intrinsics, PointCloud, Pose, VoxelGrid
from .pairs import PairSample

MAGIC = b"T4PS"
VERSION = 1


class DatasetFormatError(ValueError):
    pass


class CorruptionError(DatasetFormatError):
    pass


@dataclass
class DatasetManifest:
    version: int
    classes: Tuple[str, ...]
    voxel_size: float
    offsets: Tuple[int, ...]
    checksum: int

    @property
    def sample_count(self) -> int:
        return len(self.offsets)


def _sample_arrays(s: PairSample) -> Dict[str, np.ndarray]:
    g, c = s.grid, s.cloud
    arrays = {
        "frame_id": np.array([s.frame_id], dtype=np.int64),
        "color": s.color,
        "depth": s.depth.values,
        "max_range": np.array([s.depth.max_range]),
        "pose": s.pose.T,
        "K": s.intrinsics.K,
        "extent": np.array([s.intrinsics.width, s.intrinsics.height], dtype=np.int64),
        "grid.origin": g.origin,
        "grid.cells": g.cells,
        "grid.centroids": g.centroids,
        "grid.counts": g.counts,
        "cloud.positions": c.positions,
        "pairs": s.pairs.pairs,
        "pairs.raster": np.array([s.pairs.raster_h, s.pairs.raster_w], dtype=np.int64),
        "decoder_pairs": s.decoder_pairs.pairs,
        "decoder_pairs.raster": np.array([s.decoder_pairs.raster_h, s.decoder_pairs.raster_w], dtype=np.int64),
    }
    optional = {"grid.colors": g.colors, "grid.labels": g.labels, "cloud.colors": c.colors,
                "cloud.labels": c.labels, "cloud.pixel_index": c.pixel_index,
                "pairs.distances": s.pairs.distances, "decoder_pairs.distances": s.decoder_pairs.distances}
    arrays.update({k: v for k, v in optional.items() if v is not None})
    return arrays


def _encode_block(arrays: Dict[str, np.ndarray]) -> bytes:
    out = [struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        buf = io.BytesIO()
        np.save(buf, np.ascontiguousarray(arr), allow_pickle=False)
        raw, key = buf.getvalue(), name.encode("utf-8")
        out.append(struct.pack("<I", len(key)) + key + struct.pack("<Q", len(raw)) + raw)
    return b"".join(out)


def _decode_block(blob: bytes) -> Dict[str, np.ndarray]:
    (count,) = struct.unpack_from("<I", blob, 0)
    pos, arrays = 4, {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", blob, pos)
        name = blob[pos + 4:pos + 4 + n].decode("utf-8")
        pos += 4 + n
        (size,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        arrays[name] = np.load(io.BytesIO(blob[pos:pos + size]), allow_pickle=False)
        pos += size
    if pos != len(blob):
        raise CorruptionError("sample block has trailing bytes")
    return arrays


def _sample_from(a: Dict[str, np.ndarray]) -> PairSample:
    get = a.get
    w, h = (int(x) for x in a["extent"])
    grid = VoxelGrid(float(a["grid.voxel_size"][0]), a["grid.origin"], a["grid.cells"], a["grid.centroids"],
                     a["grid.counts"], get("grid.colors"), get("grid.labels"))
    cloud = PointCloud(a["cloud.positions"], get("cloud.colors"), get("cloud.labels"), get("cloud.pixel_index"))
    enc = CorrespondenceSet(a["pairs"], *(int(x) for x in a["pairs.raster"]), get("pairs.distances"))
    dec = CorrespondenceSet(a["decoder_pairs"], *(int(x) for x in a["decoder_pairs.raster"]),
                            get("decoder_pairs.distances"))
    sample = PairSample(int(a["frame_id"][0]), a["color"], DepthFrame(a["depth"], float(a["max_range"][0])),
                        Pose(a["pose"]), Intrinsics(a["K"], w, h), cloud, grid, enc, dec)
    sample.validate()
    return sample


def _manifest_bytes(classes: Sequence[str], voxel_size: float, offsets: Sequence[int], crc: int,
                    version: int) -> bytes:
    parts = [MAGIC, struct.pack("<II", version, len(classes))]
    for name in classes:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
    parts.append(struct.pack("<dI", voxel_size, len(offsets)))
    parts.append(struct.pack(f"<{len(offsets)}Q", *offsets))
    parts.append(struct.pack("<I", crc))
    return b"".join(parts)


def encode_dataset(samples: Sequence[PairSample], classes: Sequence[str], voxel_size: float,
                   version: int = VERSION) -> bytes:
    blocks = []
    for s in samples:
        arrays = _sample_arrays(s)
        arrays["grid.voxel_size"] = np.array([s.grid.voxel_size])
        blocks.append(_encode_block(arrays))
    head_len = len(_manifest_bytes(classes, voxel_size, [0] * len(blocks), 0, version))
    offsets, pos = [], head_len
    for b in blocks:
        offsets.append(pos)
        pos += len(b)
    body = b"".join(blocks)
    return _manifest_bytes(classes, voxel_size, offsets, zlib.crc32(body), version) + body


def read_manifest(blob: bytes) -> Tuple[DatasetManifest, int]:
    if blob[:4] != MAGIC:
        raise DatasetFormatError("not a dataset container (bad magic)")
    try:
        version, n_classes = struct.unpack_from("<II", blob, 4)
        if version != VERSION:
            raise DatasetFormatError(f"unsupported dataset version {version}")
        pos, classes = 12, []
        for _ in range(n_classes):
            (n,) = struct.unpack_from("<I", blob, pos)
            classes.append(blob[pos + 4:pos + 4 + n].decode("utf-8"))
            pos += 4 + n
        voxel_size, count = struct.unpack_from("<dI", blob, pos)
        pos += 12
        offsets = struct.unpack_from(f"<{count}Q", blob, pos)
        pos += 8 * count
        (crc,) = struct.unpack_from("<I", blob, pos)
        pos += 4
    except (struct.error, UnicodeDecodeError) as exc:
        raise CorruptionError(f"truncated manifest: {exc}") from exc
    return DatasetManifest(version, tuple(classes), voxel_size, tuple(offsets), crc), pos


def decode_dataset(blob: bytes) -> Tuple[DatasetManifest, List[PairSample]]:
    manifest, body_start = read_manifest(blob)
    body = blob[body_start:]
    if zlib.crc32(body) != manifest.checksum:
        raise CorruptionError("checksum mismatch")
    offsets = list(manifest.offsets) + [len(blob)]
    if any(b <= a for a, b in zip(offsets[:-1], offsets[1:])) or (manifest.offsets and offsets[0] != body_start):
        raise CorruptionError("sample offsets are not strictly increasing")
    try:
        samples = [_sample_from(_decode_block(blob[a:b])) for a, b in zip(offsets[:-1], offsets[1:])]
    except (struct.error, ValueError, KeyError) as exc:
        raise CorruptionError(f"unreadable sample block: {exc}") from exc
    return manifest, samples


def save_dataset(path, samples: Sequence[PairSample], classes: Sequence[str], voxel_size: float) -> int:
    blob = encode_dataset(samples, classes, voxel_size)
    Path(path).write_bytes(blob)
    return zlib.crc32(blob[read_manifest(blob)[1]:])


def load_dataset(path) -> Tuple[DatasetManifest, List[PairSample]]:
    return decode_dataset(Path(path).read_bytes())
