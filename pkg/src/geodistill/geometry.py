"""Oriented boxes, BEV projection, box keypoints, and per-box voxel grids.

Conventions are right-handed with x forward, y left, z up. A box's
canonical frame has its length axis along +x, so "front" is the +x face
and "right" is the -y side. ``yaw`` rotates the canonical frame into the
world about +z.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TWO_PI",
    "KIND_CENTER",
    "KIND_EDGE_MIDPOINT",
    "KIND_CORNER",
    "KEYPOINT_KINDS",
    "EDGE_CORNER_ADJACENCY",
    "PointCloud",
    "Box3D",
    "BevBox",
    "KeypointSet",
    "BoxVoxelGrid",
    "wrap_angle",
    "project_to_bev",
    "extract_keypoints",
    "voxelize_box",
    "voxel_linear_ids",
    "voxel_centers_world",
]

TWO_PI = 2.0 * math.pi

KIND_CENTER = "center"
KIND_EDGE_MIDPOINT = "edge-midpoint"
KIND_CORNER = "corner"

# Canonical keypoint layout in unit half-extents: center, edge midpoints
# (front, right, rear, left), corners (front-right, rear-right, rear-left,
# front-left). Scaled by (l, w) this is the fixed 9-point ordering every
# relation matrix indexes into.
_UNIT_KEYPOINTS = np.array(
    [
        [0.0, 0.0],
        [0.5, 0.0],
        [0.0, -0.5],
        [-0.5, 0.0],
        [0.0, 0.5],
        [0.5, -0.5],
        [-0.5, -0.5],
        [-0.5, 0.5],
        [0.5, 0.5],
    ]
)

KEYPOINT_KINDS = (
    KIND_CENTER,
    KIND_EDGE_MIDPOINT,
    KIND_EDGE_MIDPOINT,
    KIND_EDGE_MIDPOINT,
    KIND_EDGE_MIDPOINT,
    KIND_CORNER,
    KIND_CORNER,
    KIND_CORNER,
    KIND_CORNER,
)

# Corner keypoint indices flanking each edge midpoint, keyed by the edge
# midpoint's position in the fixed ordering.
EDGE_CORNER_ADJACENCY = {1: (5, 8), 2: (5, 6), 3: (6, 7), 4: (7, 8)}


def wrap_angle(theta):
    """Wrap angles into (-pi, pi]; inputs congruent to pi map to +pi."""
    wrapped = np.mod(theta, TWO_PI)
    wrapped = np.where(wrapped > math.pi, wrapped - TWO_PI, wrapped)
    if np.ndim(theta) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class PointCloud:
    """Points as an (N, 4) float32 array of x, y, z, intensity.

    Point order carries no geometric meaning but is a stable identity:
    deterministic sampling is defined relative to it.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float32)
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ValueError(f"points must have shape (N, 4), got {pts.shape}")
        if pts.size:
            if not np.isfinite(pts).all():
                raise ValueError("point cloud contains non-finite values")
            if pts[:, 3].min() < 0.0 or pts[:, 3].max() > 1.0:
                raise ValueError("intensity must lie in [0, 1]")
        object.__setattr__(self, "points", pts)

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    @property
    def intensity(self) -> np.ndarray:
        return self.points[:, 3]

    def __len__(self) -> int:
        return self.points.shape[0]

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.empty((0, 4), dtype=np.float32))


@dataclass(frozen=True)
class Box3D:
    """Oriented box: center (x, y, z) m, dims (l, w, h) m, yaw radians.

    Yaw is normalized into (-pi, pi] at construction.
    """

    center: np.ndarray
    dims: np.ndarray
    yaw: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64)
        dims = np.asarray(self.dims, dtype=np.float64)
        if center.shape != (3,) or dims.shape != (3,):
            raise ValueError("center and dims must be length-3 vectors")
        yaw = float(self.yaw)
        if not (np.isfinite(center).all() and np.isfinite(dims).all() and math.isfinite(yaw)):
            raise ValueError("box parameters must be finite")
        if (dims <= 0.0).any():
            raise ValueError(f"box dims must be positive, got {tuple(dims)}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", wrap_angle(yaw))

    def to_canonical(self, xyz) -> np.ndarray:
        """Transform world (N, 3) coordinates into the box frame."""
        xyz = np.asarray(xyz, dtype=np.float64)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        dx = xyz[:, 0] - self.center[0]
        dy = xyz[:, 1] - self.center[1]
        return np.stack(
            [c * dx + s * dy, -s * dx + c * dy, xyz[:, 2] - self.center[2]], axis=1
        )

    def to_world(self, xyz) -> np.ndarray:
        """Transform box-frame (N, 3) coordinates into the world frame."""
        xyz = np.asarray(xyz, dtype=np.float64)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.stack(
            [
                c * xyz[:, 0] - s * xyz[:, 1] + self.center[0],
                s * xyz[:, 0] + c * xyz[:, 1] + self.center[1],
                xyz[:, 2] + self.center[2],
            ],
            axis=1,
        )


@dataclass(frozen=True)
class BevBox:
    """Bird's-eye-view box: center (x, y) m, dims (l, w) m, yaw radians."""

    center: np.ndarray
    dims: np.ndarray
    yaw: float

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64)
        dims = np.asarray(self.dims, dtype=np.float64)
        if center.shape != (2,) or dims.shape != (2,):
            raise ValueError("center and dims must be length-2 vectors")
        yaw = float(self.yaw)
        if not (np.isfinite(center).all() and np.isfinite(dims).all() and math.isfinite(yaw)):
            raise ValueError("box parameters must be finite")
        if (dims <= 0.0).any():
            raise ValueError(f"box dims must be positive, got {tuple(dims)}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "yaw", yaw)

    def corners(self) -> np.ndarray:
        """World-frame corners (4, 2), ordered FR, RR, RL, FL."""
        scaled = _UNIT_KEYPOINTS[5:] * self.dims
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        x = c * scaled[:, 0] - s * scaled[:, 1] + self.center[0]
        y = s * scaled[:, 0] + c * scaled[:, 1] + self.center[1]
        return np.stack([x, y], axis=1)


@dataclass(frozen=True)
class KeypointSet:
    """The 9 BEV keypoints of a box in the fixed canonical ordering."""

    points: np.ndarray
    kinds: tuple = KEYPOINT_KINDS

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (9, 2):
            raise ValueError(f"keypoints must have shape (9, 2), got {pts.shape}")
        if not np.isfinite(pts).all():
            raise ValueError("keypoints must be finite")
        if tuple(self.kinds) != KEYPOINT_KINDS:
            raise ValueError("keypoint kinds must follow the fixed ordering")
        corners = pts[5:]
        if np.abs(pts[0] - corners.mean(axis=0)).max() > 1e-9:
            raise ValueError("center keypoint must equal the corner mean")
        for mid, (a, b) in EDGE_CORNER_ADJACENCY.items():
            if np.abs(pts[mid] - 0.5 * (pts[a] + pts[b])).max() > 1e-9:
                raise ValueError("edge midpoints must bisect their adjacent corners")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "kinds", KEYPOINT_KINDS)

    @property
    def center(self) -> np.ndarray:
        return self.points[0]

    @property
    def edge_midpoints(self) -> np.ndarray:
        return self.points[1:5]

    @property
    def corners(self) -> np.ndarray:
        return self.points[5:]

    def select(self, kinds) -> np.ndarray:
        """Keypoints of the given kinds, preserving the fixed ordering."""
        wanted = set(kinds)
        unknown = wanted - {KIND_CENTER, KIND_EDGE_MIDPOINT, KIND_CORNER}
        if unknown:
            raise ValueError(f"unknown keypoint kinds: {sorted(unknown)}")
        mask = [k in wanted for k in self.kinds]
        return self.points[np.asarray(mask)]


def project_to_bev(box: Box3D) -> BevBox:
    """Drop z and height; (x, y, l, w, yaw) carry over exactly."""
    return BevBox(center=box.center[:2], dims=box.dims[:2], yaw=box.yaw)


def extract_keypoints(box: BevBox) -> KeypointSet:
    """The box's 9 world-frame keypoints in the fixed canonical ordering."""
    scaled = _UNIT_KEYPOINTS * box.dims
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    x = c * scaled[:, 0] - s * scaled[:, 1] + box.center[0]
    y = s * scaled[:, 0] + c * scaled[:, 1] + box.center[1]
    return KeypointSet(np.stack([x, y], axis=1))


def voxel_linear_ids(canonical_xyz, dims, grid) -> np.ndarray:
    """Per-point linear voxel ids for box-frame points inside the extent.

    Bins follow C order over (length, width, height); points on the upper
    face of a bin boundary are clamped into the last bin.
    """
    canonical_xyz = np.asarray(canonical_xyz, dtype=np.float64)
    n_l, n_w, n_h = grid
    l, w, h = (float(d) for d in dims)
    bx = np.clip(np.floor((canonical_xyz[:, 0] + l / 2.0) / (l / n_l)), 0, n_l - 1)
    by = np.clip(np.floor((canonical_xyz[:, 1] + w / 2.0) / (w / n_w)), 0, n_w - 1)
    bz = np.clip(np.floor((canonical_xyz[:, 2] + h / 2.0) / (h / n_h)), 0, n_h - 1)
    return ((bx.astype(np.int64) * n_w + by.astype(np.int64)) * n_h + bz.astype(np.int64))


def voxel_centers_world(box: Box3D, grid) -> np.ndarray:
    """World-frame centers of all grid voxels, ordered by linear voxel id."""
    n_l, n_w, n_h = grid
    l, w, h = (float(d) for d in box.dims)
    ii, jj, kk = np.meshgrid(
        np.arange(n_l), np.arange(n_w), np.arange(n_h), indexing="ij"
    )
    canon = np.stack(
        [
            -l / 2.0 + (ii.ravel() + 0.5) * (l / n_l),
            -w / 2.0 + (jj.ravel() + 0.5) * (w / n_w),
            -h / 2.0 + (kk.ravel() + 0.5) * (h / n_h),
        ],
        axis=1,
    )
    return box.to_world(canon)


@dataclass(frozen=True)
class BoxVoxelGrid:
    """A box's n_l x n_w x n_h partition with point-to-voxel assignment.

    ``inside_indices`` and ``voxel_ids`` are parallel arrays mapping each
    in-box point (by index into the source cloud) to its linear voxel id;
    every other point index is in ``outside_indices``.
    """

    box: Box3D
    grid: tuple
    voxel_centers: np.ndarray
    inside_indices: np.ndarray
    voxel_ids: np.ndarray
    outside_indices: np.ndarray
    n_points: int

    def __post_init__(self):
        n_l, n_w, n_h = self.grid
        if len(self.inside_indices) != len(self.voxel_ids):
            raise ValueError("inside_indices and voxel_ids must be parallel")
        if len(self.inside_indices) + len(self.outside_indices) != self.n_points:
            raise ValueError("voxel grid does not partition the cloud")
        if self.voxel_centers.shape != (n_l * n_w * n_h, 3):
            raise ValueError("voxel_centers shape does not match the grid")

    @property
    def n_voxels(self) -> int:
        n_l, n_w, n_h = self.grid
        return n_l * n_w * n_h

    def assignment(self) -> dict:
        """In-box point index -> linear voxel id."""
        return {int(i): int(v) for i, v in zip(self.inside_indices, self.voxel_ids)}


def voxelize_box(box: Box3D, cloud: PointCloud, grid) -> BoxVoxelGrid:
    """Partition ``cloud`` by ``box`` into an n_l x n_w x n_h voxel grid.

    Every point lands either in the assignment (with a linear voxel id)
    or in ``outside_indices``.
    """
    n_l, n_w, n_h = (int(g) for g in grid)
    if min(n_l, n_w, n_h) < 1:
        raise ValueError(f"grid components must be >= 1, got {(n_l, n_w, n_h)}")
    canon = box.to_canonical(cloud.xyz)
    half = box.dims / 2.0
    inside = (
        (np.abs(canon[:, 0]) <= half[0])
        & (np.abs(canon[:, 1]) <= half[1])
        & (np.abs(canon[:, 2]) <= half[2])
    )
    indices = np.arange(len(cloud), dtype=np.int64)
    return BoxVoxelGrid(
        box=box,
        grid=(n_l, n_w, n_h),
        voxel_centers=voxel_centers_world(box, (n_l, n_w, n_h)),
        inside_indices=indices[inside],
        voxel_ids=voxel_linear_ids(canon[inside], box.dims, (n_l, n_w, n_h)),
        outside_indices=indices[~inside],
        n_points=len(cloud),
    )
