"""Desk-scale teacher-student simulation.

A synthetic scene generator, a pair of tiny linear BEV feature extractors,
jittered pseudo labels, and a plain gradient-descent loop that minimizes
the score-weighted relation loss. The teacher is frozen; the student's
cell transform and adapter are trained until its relation matrices track
the teacher's.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .augment import AugmentConfig, PseudoLabel, augment_scene
from .geometry import Box3D, PointCloud, extract_keypoints, project_to_bev
from .relation import (
    FeatureMap,
    RelationConfig,
    align_feature_map,
    relation_supervision,
    sample_with_footprint,
    total_loss,
)

__all__ = [
    "CLASS_TEMPLATES",
    "SceneSpec",
    "SyntheticScene",
    "LabelNoise",
    "ToyExtractor",
    "StepReport",
    "TrainReport",
    "ExperimentConfig",
    "ConfigError",
    "TrainingDiverged",
    "generate_scene",
    "teacher_pseudo_labels",
    "bev_statistics",
    "distill_step",
    "run_experiment",
    "load_experiment_config",
    "default_config_path",
]

# class id -> (name, (l, w, h))
CLASS_TEMPLATES = (
    ("car", (4.5, 1.9, 1.6)),
    ("pedestrian", (0.8, 0.8, 1.7)),
    ("cyclist", (1.8, 0.6, 1.7)),
)
_CLASS_BY_NAME = {name: i for i, (name, _) in enumerate(CLASS_TEMPLATES)}


class ConfigError(ValueError):
    """An experiment config is malformed; the message names the key."""


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite."""


@dataclass(frozen=True)
class SceneSpec:
    """Synthetic scene recipe: box count, extent, class mix, densities."""

    n_boxes: int = 3
    n_background: int = 1200
    extent: float = 60.0
    base_points: float = 500.0
    density_falloff: float = 80.0
    min_points: int = 40
    class_mix: tuple = (("car", 0.7), ("cyclist", 0.2), ("pedestrian", 0.1))
    seed: int = 0

    def __post_init__(self):
        if self.n_boxes < 1:
            raise ValueError(f"n_boxes must be >= 1, got {self.n_boxes}")
        if self.n_background < 0:
            raise ValueError(f"n_background must be >= 0, got {self.n_background}")
        if self.extent <= 0.0:
            raise ValueError(f"extent must be positive, got {self.extent}")
        if self.min_points < 1:
            raise ValueError(f"min_points must be >= 1, got {self.min_points}")
        for name, weight in self.class_mix:
            if name not in _CLASS_BY_NAME:
                raise ValueError(f"unknown class {name!r} in class_mix")
            if weight < 0.0:
                raise ValueError(f"class weight must be >= 0, got {weight}")


@dataclass(frozen=True)
class SyntheticScene:
    """Generated point cloud with its ground-truth boxes."""

    cloud: PointCloud
    boxes: tuple
    classes: tuple
    seed: int


def _points_for_range(spec: SceneSpec, bev_range: float) -> int:
    """Box point budget; decays with range, floored at min_points."""
    return max(
        spec.min_points,
        int(math.floor(spec.base_points * math.exp(-bev_range / spec.density_falloff))),
    )


def generate_scene(spec: SceneSpec) -> SyntheticScene:
    """Deterministic synthetic scene under ``spec.seed``.

    Boxes receive fewer points the farther they sit from the origin,
    mimicking LiDAR sparsity; background points fill the square extent.
    """
    largest = max(max(dims[:2]) for _, dims in CLASS_TEMPLATES)
    if 2.0 * spec.extent <= largest:
        raise ValueError(
            f"extent {spec.extent} is smaller than the largest box ({largest} m)"
        )
    rng = np.random.default_rng(spec.seed)
    names = [name for name, _ in spec.class_mix]
    weights = np.array([w for _, w in spec.class_mix], dtype=np.float64)
    weights = weights / weights.sum()

    margin = largest / 2.0 + 0.5
    boxes, classes, chunks = [], [], []
    for _ in range(spec.n_boxes):
        name = names[int(rng.choice(len(names), p=weights))]
        class_id = _CLASS_BY_NAME[name]
        dims = np.array(CLASS_TEMPLATES[class_id][1]) * rng.uniform(0.9, 1.1, 3)
        center_xy = rng.uniform(-spec.extent + margin, spec.extent - margin, 2)
        center = np.array([center_xy[0], center_xy[1], dims[2] / 2.0 + rng.uniform(-0.1, 0.1)])
        box = Box3D(center=center, dims=dims, yaw=rng.uniform(-math.pi, math.pi))
        boxes.append(box)
        classes.append(class_id)

        n = _points_for_range(spec, math.hypot(center[0], center[1]))
        canon = rng.uniform(-0.5, 0.5, (n, 3)) * dims
        world = box.to_world(canon)
        intensity = rng.uniform(0.0, 1.0, (n, 1))
        chunks.append(np.hstack([world, intensity]))

    if spec.n_background:
        xy = rng.uniform(-spec.extent, spec.extent, (spec.n_background, 2))
        z = rng.uniform(-0.2, 3.0, (spec.n_background, 1))
        intensity = rng.uniform(0.0, 1.0, (spec.n_background, 1))
        chunks.append(np.hstack([xy, z, intensity]))

    points = np.vstack(chunks).astype(np.float32) if chunks else np.empty((0, 4), np.float32)
    return SyntheticScene(
        cloud=PointCloud(points), boxes=tuple(boxes), classes=tuple(classes),
        seed=spec.seed,
    )


@dataclass(frozen=True)
class LabelNoise:
    """Bounded jitter applied to ground truth to fake teacher predictions."""

    position: float = 0.3
    yaw: float = 0.05
    score_falloff: float = 2.0

    def __post_init__(self):
        if self.position < 0.0 or self.yaw < 0.0 or self.score_falloff <= 0.0:
            raise ValueError("jitter magnitudes must be >= 0 and falloff > 0")


def teacher_pseudo_labels(scene: SyntheticScene, noise: LabelNoise, seed: int) -> list:
    """Jittered copies of the ground-truth boxes with confidence scores.

    The score decays monotonically with the applied jitter magnitude, so
    an unjittered box scores exactly 1.
    """
    rng = np.random.default_rng(seed)
    labels = []
    for box, class_id in zip(scene.boxes, scene.classes):
        d_pos = rng.uniform(-noise.position, noise.position, 3)
        d_yaw = float(rng.uniform(-noise.yaw, noise.yaw))
        jittered = Box3D(center=box.center + d_pos, dims=box.dims, yaw=box.yaw + d_yaw)
        magnitude = float(np.linalg.norm(d_pos)) + abs(d_yaw)
        score = math.exp(-magnitude / noise.score_falloff)
        labels.append(PseudoLabel(box=jittered, class_id=class_id, score=score))
    return labels


_N_STATS = 4  # count, mean height, mean intensity, occupancy


def bev_statistics(cloud: PointCloud, extent: float, cells: int) -> np.ndarray:
    """(cells, cells, 4) per-cell stats over the square [-extent, extent]^2."""
    stats = np.zeros((cells, cells, _N_STATS), dtype=np.float64)
    if len(cloud) == 0:
        return stats
    xyz = cloud.xyz.astype(np.float64)
    res = 2.0 * extent / cells
    cols = np.floor((xyz[:, 0] + extent) / res).astype(np.int64)
    rows = np.floor((xyz[:, 1] + extent) / res).astype(np.int64)
    ok = (cols >= 0) & (cols < cells) & (rows >= 0) & (rows < cells)
    flat = rows[ok] * cells + cols[ok]
    size = cells * cells
    count = np.bincount(flat, minlength=size).astype(np.float64)
    z_sum = np.bincount(flat, weights=xyz[ok, 2], minlength=size)
    i_sum = np.bincount(flat, weights=cloud.intensity[ok].astype(np.float64), minlength=size)
    nonzero = np.maximum(count, 1.0)
    stats[:, :, 0] = count.reshape(cells, cells)
    stats[:, :, 1] = (z_sum / nonzero).reshape(cells, cells)
    stats[:, :, 2] = (i_sum / nonzero).reshape(cells, cells)
    stats[:, :, 3] = (count > 0).reshape(cells, cells)
    return stats


@dataclass(frozen=True)
class ToyExtractor:
    """Linear BEV feature extractor over per-cell point statistics.

    ``weight`` maps the 4 cell statistics to C channels; the optional
    ``adapter`` is a trainable C x C map applied on top (student only).
    The output map always covers the configured square extent.
    """

    weight: np.ndarray
    adapter: np.ndarray | None
    extent: float
    cells: int

    def __post_init__(self):
        weight = np.asarray(self.weight, dtype=np.float64)
        if weight.ndim != 2 or weight.shape[1] != _N_STATS:
            raise ValueError(f"weight must be (C, {_N_STATS}), got {weight.shape}")
        if not np.isfinite(weight).all():
            raise ValueError("weight must be finite")
        adapter = self.adapter
        if adapter is not None:
            adapter = np.asarray(adapter, dtype=np.float64)
            c = weight.shape[0]
            if adapter.shape != (c, c):
                raise ValueError(f"adapter must be ({c}, {c}), got {adapter.shape}")
            if not np.isfinite(adapter).all():
                raise ValueError("adapter must be finite")
        object.__setattr__(self, "weight", weight)
        object.__setattr__(self, "adapter", adapter)

    @property
    def channels(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def create(cls, channels: int, extent: float, cells: int, rng,
               with_adapter: bool, init_scale: float = 0.5) -> "ToyExtractor":
        weight = rng.normal(0.0, init_scale, (channels, _N_STATS))
        adapter = np.eye(channels) if with_adapter else None
        return cls(weight=weight, adapter=adapter, extent=extent, cells=cells)

    def feature_map(self, cloud: PointCloud) -> FeatureMap:
        stats = bev_statistics(cloud, self.extent, self.cells)
        values = stats @ self.weight.T
        if self.adapter is not None:
            values = values @ self.adapter.T
        bound = (-self.extent, self.extent, -self.extent, self.extent)
        return FeatureMap(values, bound)

    def parameter_norm(self) -> float:
        total = float(np.sum(self.weight * self.weight))
        if self.adapter is not None:
            total += float(np.sum(self.adapter * self.adapter))
        return math.sqrt(total)


@dataclass(frozen=True)
class StepReport:
    """One training step: losses, relation gap, parameter norm."""

    l_relation: float
    l_base: float
    l_total: float
    rel_diff: float
    param_norm: float


@dataclass
class TrainReport:
    """Per-iteration series plus the final convergence flag."""

    steps: list = field(default_factory=list)
    converged: bool = False

    @property
    def relation_series(self) -> list:
        return [s.l_relation for s in self.steps]

    @property
    def rel_diff_series(self) -> list:
        return [s.rel_diff for s in self.steps]

    def to_csv(self, fh) -> None:
        fh.write("iteration,l_relation,l_base,l_total,rel_diff,param_norm\n")
        for i, s in enumerate(self.steps):
            fh.write(
                f"{i},{s.l_relation!r},{s.l_base!r},{s.l_total!r},"
                f"{s.rel_diff!r},{s.param_norm!r}\n"
            )
        fh.write(f"# converged={'yes' if self.converged else 'no'}\n")


def _object_features(teacher_map, student_map, labels, cfg, student_transform):
    """Sampled (teacher, student) keypoint features per label box."""
    f_t, f_s, footprints, scores = [], [], [], []
    for label in labels:
        kps = extract_keypoints(project_to_bev(label.box))
        xy = kps.select(cfg.keypoint_kinds)
        xy_student = xy if student_transform is None else xy @ student_transform.T
        t_feats, _ = sample_with_footprint(teacher_map, xy)[:2]
        s_feats, _, rows, cols, weights = sample_with_footprint(student_map, xy_student)
        f_t.append(t_feats)
        f_s.append(s_feats)
        footprints.append((rows, cols, weights))
        scores.append(label.score)
    return (
        np.array(f_t),
        np.array(f_s),
        footprints,
        np.array(scores, dtype=np.float64),
    )


def distill_step(student: ToyExtractor, teacher: ToyExtractor,
                 scene: SyntheticScene, labels, cfg: RelationConfig, lr: float,
                 student_cloud: PointCloud | None = None,
                 student_transform: np.ndarray | None = None,
                 base_weight: float = 0.0):
    """One gradient-descent update of the student extractor.

    Computes both feature maps, aligns them, samples keypoint features at
    the label boxes, and backpropagates the weighted relation loss (plus
    an optional quadratic feature-consistency surrogate scaled by
    ``base_weight``) through the bilinear sampling and the student's
    linear parameters. Returns the updated student and a StepReport.
    """
    if lr < 0.0:
        raise ValueError(f"lr must be >= 0, got {lr}")
    if (student.extent, student.cells) != (teacher.extent, teacher.cells):
        raise ValueError("student and teacher must share map geometry")
    teacher_map = teacher.feature_map(scene.cloud)

    cloud_s = scene.cloud if student_cloud is None else student_cloud
    stats = bev_statistics(cloud_s, student.extent, student.cells)
    pre = stats @ student.weight.T
    values = pre if student.adapter is None else pre @ student.adapter.T
    if not np.isfinite(values).all():
        raise TrainingDiverged("student feature map became non-finite")
    bound = (-student.extent, student.extent, -student.extent, student.extent)
    student_map = align_feature_map(
        FeatureMap(values, bound), teacher_map.extent, teacher_map.values.shape[:2]
    )

    f_t, f_s, footprints, scores = _object_features(
        teacher_map, student_map, labels, cfg, student_transform
    )
    result = relation_supervision(f_s, f_t, scores, cfg)

    d_map = np.zeros_like(student_map.values)
    for (rows, cols, weights), g in zip(footprints, result.gradient):
        np.add.at(d_map, (rows, cols), cfg.lambda1 * weights[:, :, None] * g[:, None, :])

    l_base = 0.0
    if base_weight > 0.0:
        diff = student_map.values - teacher_map.values
        l_base = base_weight * float(np.mean(diff * diff))
        d_map += base_weight * 2.0 * diff / diff.size

    flat = d_map.reshape(-1, student.channels)
    pre_flat = pre.reshape(-1, student.channels)
    stats_flat = stats.reshape(-1, _N_STATS)
    if student.adapter is not None:
        d_adapter = flat.T @ pre_flat
        d_pre = flat @ student.adapter
        new_adapter = student.adapter - lr * d_adapter
    else:
        d_adapter = None
        d_pre = flat
        new_adapter = None
    d_weight = d_pre.T @ stats_flat
    new_weight = student.weight - lr * d_weight

    l_total = total_loss(l_base, result.loss, cfg.lambda1)
    if not math.isfinite(l_total):
        raise TrainingDiverged(f"non-finite training loss: {l_total}")

    included = result.included_losses
    rel_diff = float(np.mean(included)) if included else float("nan")
    updated = replace(student, weight=new_weight, adapter=new_adapter)
    report = StepReport(
        l_relation=result.loss,
        l_base=l_base,
        l_total=l_total,
        rel_diff=rel_diff,
        param_norm=updated.parameter_norm(),
    )
    return updated, report


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully-resolved experiment settings; see configs/default.cfg."""

    scene: SceneSpec
    n_scenes: int
    label_noise: LabelNoise
    label_seed: int
    augment_enabled: bool
    augment: AugmentConfig
    strong_enabled: bool
    strong_seed: int
    flip_prob: float
    max_rotation: float
    relation: RelationConfig
    model_seed: int
    channels: int
    map_cells: int
    init_scale: float
    iterations: int
    learning_rate: float
    base_weight: float
    convergence_ratio: float = 0.1
    convergence_rel_diff: float = 0.05


def default_config_path() -> str:
    """Path of the bundled default experiment config."""
    return os.path.join(os.path.dirname(__file__), "configs", "default.cfg")


def _parse_class_mix(text):
    mix = []
    for part in text.split(","):
        name, _, weight = part.strip().partition(":")
        if not weight:
            raise ValueError(f"class mix entry {part!r} must look like name:weight")
        mix.append((name.strip(), float(weight)))
    return tuple(mix)


def _parse_grid(text):
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise ValueError(f"grid must look like 4x2x1, got {text!r}")
    return tuple(int(p) for p in parts)


_SCHEMA = {
    "scene": {
        "seed": int, "boxes": int, "background_points": int, "extent": float,
        "base_points": float, "density_falloff": float, "min_points": int,
        "class_mix": _parse_class_mix,
    },
    "labels": {
        "seed": int, "position_jitter": float, "yaw_jitter": float,
        "score_falloff": float,
    },
    "augment": {
        "enabled": bool, "seed": int, "mode": str, "grid": _parse_grid,
        "c_decay": float, "d_range": float, "tau_aug": float, "n_p_min": int,
        "keep_ratio": float,
    },
    "strong": {
        "enabled": bool, "seed": int, "flip_prob": float, "max_rotation": float,
    },
    "relation": {
        "lambda1": float, "score_threshold": float, "epsilon_norm": float,
        "self_pairing": bool, "keypoints": str,
    },
    "model": {"seed": int, "channels": int, "map_cells": int, "init_scale": float},
    "train": {
        "scenes": int, "iterations": int, "learning_rate": float,
        "base_weight": float,
    },
}

_BOOL_VALUES = {"true": True, "false": False, "yes": True, "no": False,
                "1": True, "0": False}


def load_experiment_config(path) -> ExperimentConfig:
    """Parse and validate an INI experiment config.

    Raises ConfigError naming the offending section and key; parse errors
    from the INI layer keep their line numbers.
    """
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh, source=str(path))
    except OSError:
        raise
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    values = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{path}: unknown key [{section}] {key}")
            raw = parser[section][key]
            kind = _SCHEMA[section][key]
            try:
                if kind is bool:
                    value = _BOOL_VALUES[raw.strip().lower()]
                elif kind is str:
                    value = raw.strip()
                else:
                    value = kind(raw)
            except (ValueError, KeyError) as exc:
                raise ConfigError(
                    f"{path}: bad value for [{section}] {key}: {raw!r}"
                ) from exc
            values[(section, key)] = value

    def get(section, key, default):
        return values.get((section, key), default)

    try:
        scene = SceneSpec(
            n_boxes=get("scene", "boxes", 3),
            n_background=get("scene", "background_points", 1200),
            extent=get("scene", "extent", 60.0),
            base_points=get("scene", "base_points", 500.0),
            density_falloff=get("scene", "density_falloff", 80.0),
            min_points=get("scene", "min_points", 40),
            class_mix=get("scene", "class_mix",
                          (("car", 0.7), ("cyclist", 0.2), ("pedestrian", 0.1))),
            seed=get("scene", "seed", 0),
        )
        noise = LabelNoise(
            position=get("labels", "position_jitter", 0.3),
            yaw=get("labels", "yaw_jitter", 0.05),
            score_falloff=get("labels", "score_falloff", 2.0),
        )
        augment = AugmentConfig(
            grid=get("augment", "grid", (4, 2, 1)),
            c_decay=get("augment", "c_decay", 0.05),
            d_range=get("augment", "d_range", 100.0),
            n_p_min=get("augment", "n_p_min", 5),
            tau_aug=get("augment", "tau_aug", 0.7),
            mode=get("augment", "mode", "both"),
            keep_ratio=get("augment", "keep_ratio", 0.5),
            seed=get("augment", "seed", 5),
        )
        kinds_text = get("relation", "keypoints", "center,edge-midpoint,corner")
        relation = RelationConfig(
            lambda1=get("relation", "lambda1", 2.0),
            score_threshold=get("relation", "score_threshold", 0.3),
            epsilon_norm=get("relation", "epsilon_norm", 1e-8),
            self_pairing=get("relation", "self_pairing", False),
            keypoint_kinds=tuple(k.strip() for k in kinds_text.split(",")),
        )
        config = ExperimentConfig(
            scene=scene,
            n_scenes=get("train", "scenes", 1),
            label_noise=noise,
            label_seed=get("labels", "seed", 3),
            augment_enabled=get("augment", "enabled", False),
            augment=augment,
            strong_enabled=get("strong", "enabled", False),
            strong_seed=get("strong", "seed", 9),
            flip_prob=get("strong", "flip_prob", 0.5),
            max_rotation=get("strong", "max_rotation", math.pi / 4.0),
            relation=relation,
            model_seed=get("model", "seed", 11),
            channels=get("model", "channels", 8),
            map_cells=get("model", "map_cells", 64),
            init_scale=get("model", "init_scale", 0.5),
            iterations=get("train", "iterations", 500),
            learning_rate=get("train", "learning_rate", 0.2),
            base_weight=get("train", "base_weight", 0.0),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if config.n_scenes < 1:
        raise ConfigError(f"{path}: [train] scenes must be >= 1")
    if config.iterations < 0:
        raise ConfigError(f"{path}: [train] iterations must be >= 0")
    if config.learning_rate < 0.0:
        raise ConfigError(f"{path}: [train] learning_rate must be >= 0")
    if config.channels < 1 or config.map_cells < 1:
        raise ConfigError(f"{path}: [model] channels and map_cells must be >= 1")
    if not 0.0 <= config.flip_prob <= 1.0:
        raise ConfigError(f"{path}: [strong] flip_prob must lie in [0, 1]")
    return config


def _strong_transform(cfg: ExperimentConfig, rng) -> np.ndarray:
    """Global BEV transform: optional y-flip followed by a rotation."""
    phi = float(rng.uniform(-cfg.max_rotation, cfg.max_rotation))
    flip = bool(rng.random() < cfg.flip_prob)
    c, s = math.cos(phi), math.sin(phi)
    rot = np.array([[c, -s], [s, c]])
    if flip:
        rot = rot @ np.diag([1.0, -1.0])
    return rot


def _transform_cloud(cloud: PointCloud, matrix: np.ndarray) -> PointCloud:
    pts = cloud.points.copy()
    xy = pts[:, :2].astype(np.float64) @ matrix.T
    pts[:, :2] = xy.astype(np.float32)
    return PointCloud(pts)


def _transform_labels(labels, matrix: np.ndarray) -> list:
    flipped = float(np.linalg.det(matrix)) < 0.0
    phi = math.atan2(matrix[1, 0], matrix[0, 0])
    out = []
    for label in labels:
        center_xy = matrix @ label.box.center[:2]
        yaw = -label.box.yaw if flipped else label.box.yaw
        box = Box3D(
            center=np.array([center_xy[0], center_xy[1], label.box.center[2]]),
            dims=label.box.dims,
            yaw=yaw + phi,
        )
        out.append(PseudoLabel(box=box, class_id=label.class_id, score=label.score))
    return out


@dataclass(frozen=True)
class _ScoredScene:
    scene: SyntheticScene
    labels: list
    student_cloud: PointCloud | None
    student_transform: np.ndarray | None


def _prepare_training_scenes(cfg: ExperimentConfig) -> list:
    prepared = []
    for i in range(cfg.n_scenes):
        scene = generate_scene(replace(cfg.scene, seed=cfg.scene.seed + i))
        labels = teacher_pseudo_labels(scene, cfg.label_noise, cfg.label_seed + i)

        student_cloud = None
        transform = None
        aug_labels = labels
        if cfg.strong_enabled:
            rng = np.random.default_rng([cfg.strong_seed, i])
            transform = _strong_transform(cfg, rng)
            student_cloud = _transform_cloud(scene.cloud, transform)
            aug_labels = _transform_labels(labels, transform)
        if cfg.augment_enabled:
            base = student_cloud if student_cloud is not None else scene.cloud
            aug_cfg = replace(cfg.augment, seed=cfg.augment.seed + i)
            student_cloud, _ = augment_scene(base, aug_labels, False, aug_cfg)
        prepared.append(_ScoredScene(scene, labels, student_cloud, transform))
    return prepared


def run_experiment(config: ExperimentConfig, out_dir=None) -> TrainReport:
    """Run the distillation loop and optionally write ``metrics.csv``.

    Identical config and seeds give byte-identical metrics. The teacher
    stream never depends on augmentation settings.
    """
    rng = np.random.default_rng(config.model_seed)
    teacher = ToyExtractor.create(
        config.channels, config.scene.extent, config.map_cells, rng,
        with_adapter=False, init_scale=config.init_scale,
    )
    student = ToyExtractor.create(
        config.channels, config.scene.extent, config.map_cells, rng,
        with_adapter=True, init_scale=config.init_scale,
    )

    scenes = _prepare_training_scenes(config)
    report = TrainReport()
    for it in range(config.iterations):
        item = scenes[it % len(scenes)]
        student, step = distill_step(
            student, teacher, item.scene, item.labels, config.relation,
            config.learning_rate,
            student_cloud=item.student_cloud,
            student_transform=item.student_transform,
            base_weight=config.base_weight,
        )
        report.steps.append(step)

    if report.steps:
        series = report.relation_series
        initial = series[0]
        decreased = (initial == 0.0) or (min(series) < config.convergence_ratio * initial)
        final_ok = (
            math.isfinite(report.steps[-1].rel_diff)
            and report.steps[-1].rel_diff < config.convergence_rel_diff
        )
        report.converged = bool(decreased and final_ok)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, "metrics.csv")
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            report.to_csv(fh)
        os.replace(tmp, path)
    return report
