"""Distance-decayed, box-aware point dropping.

Two per-box operations act on a box voxel grid. Sparsify keeps a random
subset of the points inside independently selected voxels; order dropout
removes every point in a contiguous angular run of voxels, sweeping
clockwise or counterclockwise around the sensor bearing of the box. Both
share an exponential distance decay so far-away (already sparse) objects
are rarely touched, and a per-box retention guard that turns a drop into
a no-op rather than starve the box below ``n_p_min`` points.

Randomness is drawn from per-box streams keyed on (seed, box index), so
results do not depend on how many other boxes a scene contains or on any
internal parallelism.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    Box3D,
    PointCloud,
    BoxVoxelGrid,
    voxel_centers_world,
    voxel_linear_ids,
    voxelize_box,
    wrap_angle,
)

__all__ = [
    "CLOCKWISE",
    "COUNTERCLOCKWISE",
    "AugmentConfig",
    "PseudoLabel",
    "BoxRecord",
    "AugmentReport",
    "decay_probability",
    "voxel_order_dropout",
    "voxel_sparsify",
    "augment_scene",
]

COUNTERCLOCKWISE = "counterclockwise"
CLOCKWISE = "clockwise"

MODES = ("sparsify", "order-dropout", "both")

# Points-per-cell threshold below which the scene index is skipped and
# every point is a candidate for every box.
_INDEX_MIN_POINTS = 4096
_INDEX_CELL = 4.0


@dataclass(frozen=True)
class AugmentConfig:
    """Knobs of the per-box augmentation engine.

    ``c_decay`` and ``d_range`` parameterize the distance decay
    p = c_decay * exp(-range / d_range); ``tau_aug`` gates pseudo-labeled
    boxes; ``n_p_min`` is the per-box retention guard.
    """

    grid: tuple = (4, 2, 1)
    c_decay: float = 0.05
    d_range: float = 100.0
    n_p_min: int = 5
    tau_aug: float = 0.7
    mode: str = "both"
    keep_ratio: float = 0.5
    seed: int = 0

    def __post_init__(self):
        grid = tuple(int(g) for g in self.grid)
        if len(grid) != 3 or min(grid) < 1:
            raise ValueError(f"grid must be three integers >= 1, got {self.grid}")
        if not 0.0 < self.c_decay <= 1.0:
            raise ValueError(f"c_decay must lie in (0, 1], got {self.c_decay}")
        if not self.d_range > 0.0:
            raise ValueError(f"d_range must be positive, got {self.d_range}")
        if self.n_p_min < 0:
            raise ValueError(f"n_p_min must be >= 0, got {self.n_p_min}")
        if not 0.0 <= self.tau_aug <= 1.0:
            raise ValueError(f"tau_aug must lie in [0, 1], got {self.tau_aug}")
        mode = "order-dropout" if self.mode == "dropout" else self.mode
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 < self.keep_ratio <= 1.0:
            raise ValueError(f"keep_ratio must lie in (0, 1], got {self.keep_ratio}")
        if self.seed < 0:
            raise ValueError(f"seed must be a non-negative integer, got {self.seed}")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "mode", mode)


@dataclass(frozen=True)
class PseudoLabel:
    """A detection used to seed augmentation: box, class, teacher score."""

    box: Box3D
    class_id: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


def decay_probability(center_xy, cfg: AugmentConfig) -> float:
    """Participation probability of a box at ``center_xy`` (BEV meters)."""
    x, y = (float(v) for v in center_xy)
    return cfg.c_decay * math.exp(-math.hypot(x, y) / cfg.d_range)


def _relative_voxel_angles(voxel_centers, box: Box3D) -> np.ndarray:
    """Sensor bearings of voxel centers, re-expressed about the box bearing."""
    theta_voxels = np.arctan2(voxel_centers[:, 1], voxel_centers[:, 0])
    theta_box = math.atan2(box.center[1], box.center[0])
    return wrap_angle(theta_voxels - theta_box)


def _angular_order(relative_angles, direction) -> np.ndarray:
    """Voxel traversal order; ties broken by linear voxel id, ascending."""
    tiebreak = np.arange(len(relative_angles))
    if direction == COUNTERCLOCKWISE:
        return np.lexsort((tiebreak, relative_angles))
    if direction == CLOCKWISE:
        return np.lexsort((tiebreak, -relative_angles))
    raise ValueError(f"direction must be {COUNTERCLOCKWISE!r} or {CLOCKWISE!r}")


def _plan_order_dropout(point_ids, point_voxels, relative_angles, p, n_p_min,
                        direction, rng) -> np.ndarray:
    """Point ids to drop; empty when the retention guard fires.

    Draw protocol: one ``rng.random(n_voxels)`` call in linear voxel order.
    """
    n_voxels = len(relative_angles)
    mask = rng.random(n_voxels) < p
    count = int(mask.sum())
    order = _angular_order(relative_angles, direction)
    will_drop = np.zeros(n_voxels, dtype=bool)
    will_drop[order[:count]] = True
    planned = point_ids[will_drop[point_voxels]]
    if len(point_ids) - len(planned) > n_p_min:
        return planned
    return point_ids[:0]


def _plan_sparsify(point_ids, point_voxels, n_voxels, p, keep_ratio, n_p_min,
                   rng) -> np.ndarray:
    """Point ids to drop under voxel-wise subsampling.

    Draw protocol: one ``rng.random(n_voxels)`` selection call, then one
    ``rng.permutation`` per selected voxel that actually sheds points,
    ascending by linear voxel id. Guarded boxes draw no permutations.
    """
    selected = rng.random(n_voxels) < p
    order = np.argsort(point_voxels, kind="stable")
    occupied, starts = np.unique(point_voxels[order], return_index=True)
    counts = np.diff(np.append(starts, len(order)))

    shedding = []
    planned_total = 0
    for vox, start, count in zip(occupied, starts, counts):
        if not selected[vox]:
            continue
        keep = max(1, math.ceil(count * keep_ratio))
        if count > keep:
            shedding.append((start, int(count), keep))
            planned_total += int(count) - keep
    if planned_total == 0 or len(point_ids) - planned_total <= n_p_min:
        return point_ids[:0]

    dropped = []
    for start, count, keep in shedding:
        perm = rng.permutation(count)
        local = order[start : start + count]
        dropped.append(point_ids[local[perm[keep:]]])
    return np.sort(np.concatenate(dropped))


def _delete_points(cloud: PointCloud, drop_ids) -> PointCloud:
    if len(drop_ids) == 0:
        return PointCloud(cloud.points.copy())
    alive = np.ones(len(cloud), dtype=bool)
    alive[drop_ids] = False
    return PointCloud(cloud.points[alive])


def voxel_order_dropout(grid: BoxVoxelGrid, cloud: PointCloud, p, n_p_min,
                        direction, rng) -> PointCloud:
    """Drop a contiguous angular run of voxels from one box.

    Voxels are swept by their sensor bearing relative to the box bearing;
    a Bernoulli(p) mask fixes how many voxels of the sweep are dropped.
    Surviving points keep their original order; out-of-box points are
    untouched. If dropping would leave <= ``n_p_min`` in-box points,
    nothing is dropped.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if grid.n_points != len(cloud):
        raise ValueError("voxel grid was not built from this cloud")
    angles = _relative_voxel_angles(grid.voxel_centers, grid.box)
    drop = _plan_order_dropout(
        grid.inside_indices, grid.voxel_ids, angles, p, n_p_min, direction, rng
    )
    return _delete_points(cloud, drop)


def voxel_sparsify(grid: BoxVoxelGrid, cloud: PointCloud, p, keep_ratio,
                   n_p_min, rng) -> PointCloud:
    """Subsample points inside independently selected voxels of one box.

    Each voxel is selected with probability ``p``; a selected voxel keeps
    ceil(count * keep_ratio) of its points (at least one), chosen uniformly
    without replacement. The ``n_p_min`` guard is all-or-nothing per box.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if grid.n_points != len(cloud):
        raise ValueError("voxel grid was not built from this cloud")
    drop = _plan_sparsify(
        grid.inside_indices, grid.voxel_ids, grid.n_voxels, p, keep_ratio,
        n_p_min, rng,
    )
    return _delete_points(cloud, drop)


@dataclass(frozen=True)
class BoxRecord:
    """Per-box outcome of a scene augmentation pass."""

    index: int
    p: float
    skipped: bool
    applied: bool
    points_before: int
    points_after: int

    @property
    def points_removed(self) -> int:
        return self.points_before - self.points_after


@dataclass
class AugmentReport:
    """Scene-level augmentation report: config echo plus per-box records."""

    config: AugmentConfig
    labeled: bool
    workers: int
    points_in: int
    points_out: int
    records: list = field(default_factory=list)


class _SceneIndex:
    """Sorted 2D bin index over BEV positions for candidate lookup."""

    def __init__(self, xy, cell):
        self.cell = cell
        ij = np.floor(xy / cell).astype(np.int64)
        self.i_min = int(ij[:, 0].min())
        self.j_min = int(ij[:, 1].min())
        self.i_max = int(ij[:, 0].max())
        self.j_max = int(ij[:, 1].max())
        self.n_cols = self.j_max - self.j_min + 1
        keys = (ij[:, 0] - self.i_min) * self.n_cols + (ij[:, 1] - self.j_min)
        max_key = (self.i_max - self.i_min) * self.n_cols + (self.j_max - self.j_min)
        if max_key <= np.iinfo(np.int32).max:
            keys = keys.astype(np.int32)
        # stability is irrelevant: candidate sets are re-sorted after lookup
        self.order = np.argsort(keys, kind="quicksort")
        self.sorted_keys = keys[self.order]

    def candidates(self, center_xy, radius) -> np.ndarray:
        """Indices of points within ``radius`` (superset), sorted ascending."""
        i_lo = max(math.floor((center_xy[0] - radius) / self.cell), self.i_min)
        i_hi = min(math.floor((center_xy[0] + radius) / self.cell), self.i_max)
        j_lo = max(math.floor((center_xy[1] - radius) / self.cell), self.j_min)
        j_hi = min(math.floor((center_xy[1] + radius) / self.cell), self.j_max)
        if i_lo > i_hi or j_lo > j_hi:
            return np.empty(0, dtype=np.int64)
        bases = np.arange(i_lo - self.i_min, i_hi - self.i_min + 1) * self.n_cols
        los = np.searchsorted(self.sorted_keys, bases + (j_lo - self.j_min), "left")
        his = np.searchsorted(self.sorted_keys, bases + (j_hi - self.j_min), "right")
        rows = [self.order[lo:hi] for lo, hi in zip(los, his) if hi > lo]
        if not rows:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(rows))


@dataclass(frozen=True)
class _BoxPrep:
    """Pure per-box geometry, computed against the original cloud."""

    candidate_ids: np.ndarray
    inside_extent: np.ndarray
    voxel_ids: np.ndarray
    relative_angles: np.ndarray

    def in_box(self, alive):
        mask = self.inside_extent & alive[self.candidate_ids]
        return self.candidate_ids[mask], self.voxel_ids[mask]


def _prepare_box(cloud: PointCloud, box: Box3D, grid, index) -> _BoxPrep:
    if index is None:
        candidates = np.arange(len(cloud), dtype=np.int64)
    else:
        radius = 0.5 * math.hypot(box.dims[0], box.dims[1])
        candidates = index.candidates(box.center[:2], radius)
    canon = box.to_canonical(cloud.xyz[candidates])
    half = box.dims / 2.0
    inside = (
        (np.abs(canon[:, 0]) <= half[0])
        & (np.abs(canon[:, 1]) <= half[1])
        & (np.abs(canon[:, 2]) <= half[2])
    )
    voxel_ids = np.full(len(candidates), -1, dtype=np.int64)
    voxel_ids[inside] = voxel_linear_ids(canon[inside], box.dims, grid)
    centers = voxel_centers_world(box, grid)
    return _BoxPrep(candidates, inside, voxel_ids, _relative_voxel_angles(centers, box))


def augment_scene(cloud: PointCloud, labels, labeled_mode: bool,
                  cfg: AugmentConfig, workers: int = 1):
    """Apply the configured per-box augmentation to a whole scene.

    Boxes are processed in input order against the points still alive;
    a point removed by an earlier box is simply absent for later ones.
    Pseudo-labeled boxes (``labeled_mode=False``) with score < ``tau_aug``
    are skipped. Per-box randomness comes from streams keyed on
    (cfg.seed, box index), and ``workers`` only parallelizes the pure
    per-box geometry, so output is identical for any worker count.
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    labels = list(labels)
    n_voxels = cfg.grid[0] * cfg.grid[1] * cfg.grid[2]
    alive = np.ones(len(cloud), dtype=bool)

    index = None
    if len(cloud) >= _INDEX_MIN_POINTS and labels:
        index = _SceneIndex(cloud.xyz[:, :2].astype(np.float64), _INDEX_CELL)

    if labels:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                preps = list(
                    pool.map(
                        lambda lab: _prepare_box(cloud, lab.box, cfg.grid, index),
                        labels,
                    )
                )
        else:
            preps = [_prepare_box(cloud, lab.box, cfg.grid, index) for lab in labels]
    else:
        preps = []

    records = []
    for k, label in enumerate(labels):
        p = decay_probability(label.box.center[:2], cfg)
        ids, vids = preps[k].in_box(alive)
        before = int(ids.size)
        if not labeled_mode and label.score < cfg.tau_aug:
            records.append(BoxRecord(k, p, True, False, before, before))
            continue

        rng = np.random.default_rng([cfg.seed, k])
        removed = 0
        if cfg.mode in ("sparsify", "both"):
            drop = _plan_sparsify(ids, vids, n_voxels, p, cfg.keep_ratio,
                                  cfg.n_p_min, rng)
            if drop.size:
                alive[drop] = False
                keep = np.ones(ids.size, dtype=bool)
                keep[np.searchsorted(ids, drop)] = False
                ids, vids = ids[keep], vids[keep]
                removed += int(drop.size)
        if cfg.mode in ("order-dropout", "both"):
            direction = (COUNTERCLOCKWISE, CLOCKWISE)[int(rng.integers(0, 2))]
            drop = _plan_order_dropout(ids, vids, preps[k].relative_angles, p,
                                       cfg.n_p_min, direction, rng)
            if drop.size:
                alive[drop] = False
                removed += int(drop.size)
        records.append(BoxRecord(k, p, False, removed > 0, before, before - removed))

    out = PointCloud(cloud.points[alive])
    report = AugmentReport(
        config=cfg,
        labeled=labeled_mode,
        workers=workers,
        points_in=len(cloud),
        points_out=len(out),
        records=records,
    )
    return out, report
