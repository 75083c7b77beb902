"""File formats: binary point clouds, text label files, feature-map grids.

All integers are little-endian; all text is UTF-8 with LF line endings.

Cloud files: magic ``GPC1``, point count as u64, then count * 4 float32
(x, y, z, intensity). Feature-map files: magic ``GFM1``, H, W, C as u64,
a 6-float64 header (x_min, x_max, y_min, y_max, res_x, res_y), then
H * W * C float32 values in C order.
"""

from __future__ import annotations

import struct

import numpy as np

from .augment import PseudoLabel
from .geometry import Box3D, PointCloud
from .relation import FeatureMap

__all__ = [
    "FileFormatError",
    "CLOUD_MAGIC",
    "FEATURE_MAGIC",
    "read_cloud",
    "write_cloud",
    "read_labels",
    "write_labels",
    "read_feature_map",
    "write_feature_map",
]

CLOUD_MAGIC = b"GPC1"
FEATURE_MAGIC = b"GFM1"


class FileFormatError(ValueError):
    """A file does not conform to one of the on-disk formats."""


def write_cloud(path, cloud: PointCloud) -> None:
    payload = np.ascontiguousarray(cloud.points, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(CLOUD_MAGIC)
        fh.write(struct.pack("<Q", len(cloud)))
        fh.write(payload)


def read_cloud(path) -> PointCloud:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != CLOUD_MAGIC:
        raise FileFormatError(f"{path}: not a GPC1 cloud file")
    (count,) = struct.unpack_from("<Q", data, 4)
    if len(data) != 12 + 16 * count:
        raise FileFormatError(
            f"{path}: payload holds {len(data) - 12} bytes, expected {16 * count}"
        )
    points = np.frombuffer(data, dtype="<f4", count=count * 4, offset=12)
    try:
        return PointCloud(points.reshape(count, 4))
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc


def write_labels(path, labels) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# class_id x y z l w h yaw score\n")
        for label in labels:
            box = label.box
            fields = [str(label.class_id)] + [
                repr(float(v))
                for v in (*box.center, *box.dims, box.yaw, label.score)
            ]
            fh.write(" ".join(fields) + "\n")


def read_labels(path) -> list:
    labels = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 9:
                raise FileFormatError(
                    f"{path}:{lineno}: expected 9 fields, got {len(parts)}"
                )
            try:
                class_id = int(parts[0])
                values = [float(v) for v in parts[1:]]
                box = Box3D(center=values[0:3], dims=values[3:6], yaw=values[6])
                labels.append(PseudoLabel(box=box, class_id=class_id, score=values[7]))
            except ValueError as exc:
                raise FileFormatError(f"{path}:{lineno}: {exc}") from exc
    return labels


def write_feature_map(path, fmap: FeatureMap) -> None:
    h, w, c = fmap.values.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<QQQ", h, w, c))
        fh.write(struct.pack("<6d", *fmap.extent, *fmap.resolution))
        fh.write(np.ascontiguousarray(fmap.values, dtype="<f4").tobytes())


def read_feature_map(path) -> FeatureMap:
    with open(path, "rb") as fh:
        data = fh.read()
    header = 4 + 24 + 48
    if len(data) < header or data[:4] != FEATURE_MAGIC:
        raise FileFormatError(f"{path}: not a GFM1 feature-map file")
    h, w, c = struct.unpack_from("<QQQ", data, 4)
    x_min, x_max, y_min, y_max, res_x, res_y = struct.unpack_from("<6d", data, 28)
    expected = h * w * c * 4
    if len(data) != header + expected:
        raise FileFormatError(
            f"{path}: payload holds {len(data) - header} bytes, expected {expected}"
        )
    values = np.frombuffer(data, dtype="<f4", count=h * w * c, offset=header)
    try:
        return FeatureMap(
            values.reshape(h, w, c).astype(np.float64),
            (x_min, x_max, y_min, y_max),
            (res_x, res_y),
        )
    except ValueError as exc:
        raise FileFormatError(f"{path}: {exc}") from exc
