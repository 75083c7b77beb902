"""Keypoint relation supervision: feature maps, relation matrices, losses.

A relation matrix holds pairwise cosine similarities between keypoint
feature vectors and encodes an object's internal geometry. The student
matrix pairs student row-features with teacher column-features; the
teacher matrix pairs the teacher with itself. Supervision is the mean
absolute difference between the two, weighted per object by the teacher's
classification score. Everything here is plain numpy with exact analytic
gradients with respect to the student features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import KIND_CENTER, KIND_CORNER, KIND_EDGE_MIDPOINT, KeypointSet

__all__ = [
    "FeatureMap",
    "RelationMatrix",
    "RelationConfig",
    "SupervisionResult",
    "align_feature_map",
    "sample_features",
    "sample_with_footprint",
    "cosine_similarity",
    "student_relation_matrix",
    "teacher_relation_matrix",
    "relation_loss",
    "weighted_relation_loss",
    "total_loss",
    "relation_supervision",
    "relation_loss_gradient",
]

_VALID_KINDS = (KIND_CENTER, KIND_EDGE_MIDPOINT, KIND_CORNER)


@dataclass(frozen=True)
class FeatureMap:
    """Dense BEV feature grid with a world extent.

    ``values`` is (H, W, C); rows index y, columns index x. Cell (i, j)
    is centered at (x_min + (j + 0.5) * res_x, y_min + (i + 0.5) * res_y).
    """

    values: np.ndarray
    extent: tuple
    resolution: tuple = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise ValueError(f"values must be (H, W, C), got shape {values.shape}")
        if values.size and not np.isfinite(values).all():
            raise ValueError("feature map contains non-finite values")
        x_min, x_max, y_min, y_max = (float(v) for v in self.extent)
        if not (x_max > x_min and y_max > y_min):
            raise ValueError(f"degenerate extent {self.extent}")
        h, w = values.shape[:2]
        if self.resolution is None:
            resolution = ((x_max - x_min) / w, (y_max - y_min) / h)
        else:
            resolution = tuple(float(r) for r in self.resolution)
            if abs(w * resolution[0] - (x_max - x_min)) > 1e-6:
                raise ValueError("x resolution inconsistent with extent and width")
            if abs(h * resolution[1] - (y_max - y_min)) > 1e-6:
                raise ValueError("y resolution inconsistent with extent and height")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "extent", (x_min, x_max, y_min, y_max))
        object.__setattr__(self, "resolution", resolution)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class RelationMatrix:
    """K x K matrix of pairwise keypoint-feature cosine similarities."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"relation matrix must be square, got {values.shape}")
        if values.size and (values.min() < -1.0 or values.max() > 1.0):
            raise ValueError("relation entries must lie in [-1, 1]")
        object.__setattr__(self, "values", values)

    @property
    def k(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class RelationConfig:
    """Supervision knobs: loss weight, score gate, norm guard, pairing."""

    lambda1: float = 2.0
    score_threshold: float = 0.3
    epsilon_norm: float = 1e-8
    self_pairing: bool = False
    keypoint_kinds: tuple = _VALID_KINDS

    def __post_init__(self):
        if self.lambda1 < 0.0:
            raise ValueError(f"lambda1 must be >= 0, got {self.lambda1}")
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError(
                f"score_threshold must lie in [0, 1], got {self.score_threshold}"
            )
        if not self.epsilon_norm > 0.0:
            raise ValueError(f"epsilon_norm must be > 0, got {self.epsilon_norm}")
        kinds = tuple(self.keypoint_kinds)
        unknown = set(kinds) - set(_VALID_KINDS)
        if unknown or not kinds:
            raise ValueError(f"invalid keypoint kinds {kinds}")
        object.__setattr__(self, "keypoint_kinds", kinds)


def _world_to_cells(fmap: FeatureMap, xy):
    """Continuous (row, col) cell coordinates plus inside-extent mask."""
    xy = np.asarray(xy, dtype=np.float64)
    x_min, x_max, y_min, y_max = fmap.extent
    res_x, res_y = fmap.resolution
    inside = (
        (xy[:, 0] >= x_min)
        & (xy[:, 0] <= x_max)
        & (xy[:, 1] >= y_min)
        & (xy[:, 1] <= y_max)
    )
    col = (xy[:, 0] - x_min) / res_x - 0.5
    row = (xy[:, 1] - y_min) / res_y - 0.5
    return row, col, inside


def _bilinear_footprint(fmap: FeatureMap, xy):
    """Corner cell indices and weights of border-clamped bilinear sampling."""
    row, col, inside = _world_to_cells(fmap, xy)
    h, w = fmap.values.shape[:2]
    i0 = np.floor(row)
    j0 = np.floor(col)
    ty = row - i0
    tx = col - j0
    i0c = np.clip(i0, 0, h - 1).astype(np.int64)
    i1c = np.clip(i0 + 1, 0, h - 1).astype(np.int64)
    j0c = np.clip(j0, 0, w - 1).astype(np.int64)
    j1c = np.clip(j0 + 1, 0, w - 1).astype(np.int64)
    weights = np.stack(
        [(1 - ty) * (1 - tx), (1 - ty) * tx, ty * (1 - tx), ty * tx], axis=1
    )
    rows = np.stack([i0c, i0c, i1c, i1c], axis=1)
    cols = np.stack([j0c, j1c, j0c, j1c], axis=1)
    return rows, cols, weights, inside


def sample_with_footprint(fmap: FeatureMap, xy):
    """Bilinear samples plus the cells and weights that produced them.

    Returns (features (N, C), out_of_bounds (N,), rows (N, 4), cols (N, 4),
    weights (N, 4)); out-of-extent queries yield zero vectors and zero
    weights.
    """
    rows, cols, weights, inside = _bilinear_footprint(fmap, xy)
    weights = weights * inside[:, None]
    features = np.einsum("nk,nkc->nc", weights, fmap.values[rows, cols])
    return features, ~inside, rows, cols, weights


def sample_features(fmap: FeatureMap, keypoints):
    """Feature vectors at world-frame query points.

    ``keypoints`` is a KeypointSet or an (N, 2) array. Sampling is
    bilinear over the four surrounding cell centers (border-clamped);
    points outside the extent yield the zero vector and a raised flag.
    """
    xy = keypoints.points if isinstance(keypoints, KeypointSet) else keypoints
    features, out_of_bounds, _, _, _ = sample_with_footprint(fmap, xy)
    return features, out_of_bounds


def align_feature_map(fmap: FeatureMap, target_extent, target_shape) -> FeatureMap:
    """Resample a map onto a target grid in the same world frame.

    Target cells outside the source extent are zero-filled; identical
    extent and shape is an exact identity. Disjoint extents are rejected.
    """
    x_min, x_max, y_min, y_max = (float(v) for v in target_extent)
    s_x_min, s_x_max, s_y_min, s_y_max = fmap.extent
    if x_min >= s_x_max or x_max <= s_x_min or y_min >= s_y_max or y_max <= s_y_min:
        raise ValueError("target extent is disjoint from the source extent")
    h, w = (int(v) for v in target_shape)
    if h < 1 or w < 1:
        raise ValueError(f"target shape must be positive, got {target_shape}")
    if (x_min, x_max, y_min, y_max) == fmap.extent and (h, w) == fmap.values.shape[:2]:
        return FeatureMap(fmap.values.copy(), fmap.extent, fmap.resolution)
    res_x = (x_max - x_min) / w
    res_y = (y_max - y_min) / h
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    xy = np.stack(
        [x_min + (cols.ravel() + 0.5) * res_x, y_min + (rows.ravel() + 0.5) * res_y],
        axis=1,
    )
    values, _ = sample_features(fmap, xy)
    return FeatureMap(values.reshape(h, w, fmap.channels), (x_min, x_max, y_min, y_max))


def cosine_similarity(u, v, epsilon_norm: float = 1e-8) -> float:
    """<u, v> / max(|u| |v|, eps), clamped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape or u.ndim != 1:
        raise ValueError("cosine_similarity expects two equal-length vectors")
    denom = max(float(np.linalg.norm(u)) * float(np.linalg.norm(v)), epsilon_norm)
    return float(np.clip(float(u @ v) / denom, -1.0, 1.0))


def _cosine_matrix(a, b, epsilon_norm):
    """Clamped cosine matrix between row sets; einsum keeps it exactly
    symmetric when ``a is b``."""
    dots = np.einsum("ic,jc->ij", a, b)
    na = np.sqrt(np.einsum("ic,ic->i", a, a))
    nb = na if a is b else np.sqrt(np.einsum("ic,ic->i", b, b))
    denom = np.maximum(np.outer(na, nb), epsilon_norm)
    return np.clip(dots / denom, -1.0, 1.0)


def _as_feature_rows(features, name):
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be (K, C), got shape {arr.shape}")
    return arr


def student_relation_matrix(f_s, f_t, epsilon_norm: float = 1e-8,
                            self_pairing: bool = False) -> RelationMatrix:
    """Student relations: entry (i, j) pairs student feature i with teacher
    feature j. With ``self_pairing`` the student is paired with itself."""
    f_s = _as_feature_rows(f_s, "f_s")
    f_t = _as_feature_rows(f_t, "f_t")
    if f_s.shape != f_t.shape:
        raise ValueError(
            f"student/teacher shapes differ: {f_s.shape} vs {f_t.shape}"
        )
    other = f_s if self_pairing else f_t
    return RelationMatrix(_cosine_matrix(f_s, other, epsilon_norm))


def teacher_relation_matrix(f_t, epsilon_norm: float = 1e-8) -> RelationMatrix:
    """Teacher self-relations; symmetric with unit diagonal for nonzero rows."""
    f_t = _as_feature_rows(f_t, "f_t")
    return RelationMatrix(_cosine_matrix(f_t, f_t, epsilon_norm))


def _matrix_values(m):
    return m.values if isinstance(m, RelationMatrix) else np.asarray(m, dtype=np.float64)


def relation_loss(m_s, m_t) -> float:
    """Mean absolute difference over all K^2 relation entries."""
    a = _matrix_values(m_s)
    b = _matrix_values(m_t)
    if a.shape != b.shape:
        raise ValueError(f"relation matrix shapes differ: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


def weighted_relation_loss(per_object, score_threshold: float = 0.0) -> float:
    """Sum of score * per-object relation loss over qualifying objects.

    Objects with score < ``score_threshold`` are excluded; the sum is
    unnormalized and runs in input order.
    """
    total = 0.0
    for score, l_delta in per_object:
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {score}")
        if score >= score_threshold:
            total += score * l_delta
    return total


def total_loss(l_base, l_relation, lambda1) -> float:
    """Combined objective: base loss plus lambda1-weighted relation loss."""
    l_base = float(l_base)
    l_relation = float(l_relation)
    if not (math.isfinite(l_base) and math.isfinite(l_relation)):
        raise ValueError("losses must be finite")
    if l_base < 0.0 or l_relation < 0.0:
        raise ValueError("losses must be non-negative")
    return l_base + float(lambda1) * l_relation


def _loss_and_grad_single(f_s, f_t, epsilon_norm, self_pairing):
    """Unweighted relation loss and its gradient w.r.t. f_s for one object.

    The subgradient of |x| at 0 is taken as 0; entries clamped out of
    [-1, 1] contribute zero gradient.
    """
    u = f_s
    v = f_s if self_pairing else f_t
    k = u.shape[0]

    dots = np.einsum("ic,jc->ij", u, v)
    nu = np.sqrt(np.einsum("ic,ic->i", u, u))
    nv = nu if self_pairing else np.sqrt(np.einsum("ic,ic->i", v, v))
    prod = np.outer(nu, nv)
    denom = np.maximum(prod, epsilon_norm)
    raw = dots / denom
    m_s = np.clip(raw, -1.0, 1.0)
    m_t = _cosine_matrix(f_t, f_t, epsilon_norm)

    diff = m_s - m_t
    l_delta = float(np.abs(diff).mean())

    coef = np.sign(diff) * (np.abs(raw) <= 1.0) / (k * k)
    guarded = prod > epsilon_norm
    nu_sq = np.where(nu > 0.0, nu * nu, 1.0)
    nv_sq = nu_sq if self_pairing else np.where(nv > 0.0, nv * nv, 1.0)
    scaled = np.where(guarded, coef * raw, 0.0)

    grad = (coef / denom) @ v
    grad -= ((scaled / nu_sq[:, None]).sum(axis=1))[:, None] * u
    if self_pairing:
        grad += (coef / denom).T @ u
        grad -= ((scaled / nv_sq[None, :]).sum(axis=0))[:, None] * u
    return l_delta, grad


@dataclass(frozen=True)
class SupervisionResult:
    """Weighted relation loss, its student-feature gradient, and per-object
    (score, loss, included) detail."""

    loss: float
    gradient: np.ndarray
    per_object: tuple

    @property
    def included_losses(self) -> list:
        return [l for s, l, inc in self.per_object if inc]


def relation_supervision(f_s, f_t, scores, cfg: RelationConfig) -> SupervisionResult:
    """Score-weighted relation loss over objects with exact gradients.

    ``f_s`` and ``f_t`` are (K, C) for a single object or (n, K, C) for a
    batch, with ``scores`` scalar or (n,). The gradient has the shape of
    ``f_s``; the teacher is a constant.
    """
    f_s = np.asarray(f_s, dtype=np.float64)
    f_t = np.asarray(f_t, dtype=np.float64)
    single = f_s.ndim == 2
    if single:
        f_s = f_s[None]
        f_t = f_t[None]
    if f_s.ndim != 3 or f_s.shape != f_t.shape:
        raise ValueError(
            f"feature batches must share shape (n, K, C): {f_s.shape} vs {f_t.shape}"
        )
    scores = np.atleast_1d(np.asarray(scores, dtype=np.float64))
    if scores.shape != (f_s.shape[0],):
        raise ValueError(f"expected {f_s.shape[0]} scores, got shape {scores.shape}")
    if scores.size and (scores.min() < 0.0 or scores.max() > 1.0):
        raise ValueError("scores must lie in [0, 1]")

    loss = 0.0
    grad = np.zeros_like(f_s)
    detail = []
    for i in range(f_s.shape[0]):
        l_delta, g = _loss_and_grad_single(
            f_s[i], f_t[i], cfg.epsilon_norm, cfg.self_pairing
        )
        included = scores[i] >= cfg.score_threshold
        if included:
            loss += float(scores[i]) * l_delta
            grad[i] = scores[i] * g
        detail.append((float(scores[i]), l_delta, bool(included)))
    if single:
        grad = grad[0]
    return SupervisionResult(loss=loss, gradient=grad, per_object=tuple(detail))


def relation_loss_gradient(f_s, f_t, scores, cfg: RelationConfig):
    """(loss, gradient) of the weighted relation loss w.r.t. ``f_s``."""
    result = relation_supervision(f_s, f_t, scores, cfg)
    return result.loss, result.gradient
