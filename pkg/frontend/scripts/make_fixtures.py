#!/usr/bin/env python3
"""Generate binding-equivalence fixtures from the core library.

Writes 200 augmentation cases (input cloud + labels + config + expected
output cloud + expected report) and 200 relation-loss cases (features,
scores, config, expected loss and gradient) under the given directory.
Augmentation expectations come from the core API directly, so the binding
path (CLI spawn, file formats) is checked against it end to end.

Usage: python3 scripts/make_fixtures.py fixtures
"""

import json
import math
import os
import shutil
import sys

import numpy as np

from geodistill.augment import AugmentConfig, PseudoLabel, augment_scene
from geodistill.formats import write_cloud, write_labels
from geodistill.geometry import Box3D, PointCloud
from geodistill.relation import RelationConfig, relation_supervision

GRIDS = ((4, 2, 1), (2, 2, 2), (3, 1, 1), (1, 1, 1), (3, 3, 2))
MODES = ("sparsify", "dropout", "both")


def random_scene(rng):
    n_boxes = int(rng.integers(1, 5))
    boxes, chunks = [], []
    for _ in range(n_boxes):
        box = Box3D(
            center=np.array(
                [rng.uniform(-80, 80), rng.uniform(-80, 80), rng.uniform(0, 1.5)]
            ),
            dims=rng.uniform(1.0, 5.0, 3),
            yaw=rng.uniform(-math.pi, math.pi),
        )
        boxes.append(box)
        n = int(rng.integers(5, 60))
        canon = rng.uniform(-0.49, 0.49, (n, 3)) * box.dims
        chunks.append(np.hstack([box.to_world(canon), rng.uniform(0, 1, (n, 1))]))
    n_bg = int(rng.integers(20, 200))
    chunks.append(
        np.hstack(
            [rng.uniform(-90, 90, (n_bg, 2)), rng.uniform(-1, 3, (n_bg, 1)),
             rng.uniform(0, 1, (n_bg, 1))]
        )
    )
    cloud = PointCloud(np.vstack(chunks).astype(np.float32))
    labels = [
        PseudoLabel(box=b, class_id=int(rng.integers(0, 3)),
                    score=float(rng.uniform(0.0, 1.0)))
        for b in boxes
    ]
    return cloud, labels


def make_augment_cases(root, count, rng):
    os.makedirs(root, exist_ok=True)
    for case in range(count):
        cloud, labels = random_scene(rng)
        labeled = case % 3 == 0
        cfg = AugmentConfig(
            grid=GRIDS[case % len(GRIDS)],
            c_decay=float(rng.uniform(0.05, 1.0)),
            d_range=float(rng.uniform(50.0, 200.0)),
            n_p_min=int(rng.integers(0, 20)),
            tau_aug=float(rng.uniform(0.0, 0.9)),
            mode=MODES[case % len(MODES)],
            keep_ratio=float(rng.uniform(0.1, 1.0)),
            seed=int(rng.integers(0, 2 ** 31)),
        )
        expected, report = augment_scene(cloud, labels, labeled, cfg)

        prefix = os.path.join(root, f"case_{case:03d}")
        write_cloud(prefix + "_input.gpc", cloud)
        write_labels(prefix + "_labels.txt", labels)
        write_cloud(prefix + "_expected.gpc", expected)
        config = {
            "labeled": labeled,
            "grid": list(cfg.grid),
            "cDecay": cfg.c_decay,
            "dRange": cfg.d_range,
            "tauAug": cfg.tau_aug,
            "nPMin": cfg.n_p_min,
            "mode": "dropout" if cfg.mode == "order-dropout" else cfg.mode,
            "keepRatio": cfg.keep_ratio,
            "seed": cfg.seed,
        }
        with open(prefix + "_config.json", "w", encoding="utf-8") as fh:
            json.dump(config, fh, indent=1)
        rows = [
            {
                "index": rec.index,
                "p": rec.p,
                "skipped": rec.skipped,
                "applied": rec.applied,
                "pointsBefore": rec.points_before,
                "pointsAfter": rec.points_after,
            }
            for rec in report.records
        ]
        with open(prefix + "_report.json", "w", encoding="utf-8") as fh:
            json.dump({"rows": rows, "pointsOut": report.points_out}, fh, indent=1)


def make_relation_cases(path, count, rng):
    cases = []
    for case in range(count):
        n_objects = int(rng.integers(1, 4))
        k = int(rng.choice([2, 5, 9]))
        channels = int(rng.choice([4, 8, 16]))
        # float32-representable values so file/JSON round-trips stay exact
        f_s = rng.normal(size=(n_objects, k, channels)).astype(np.float32).astype(np.float64)
        f_t = rng.normal(size=(n_objects, k, channels)).astype(np.float32).astype(np.float64)
        scores = rng.uniform(0.0, 1.0, n_objects)
        cfg = RelationConfig(
            score_threshold=float(rng.choice([0.0, 0.3, 0.5])),
            epsilon_norm=1e-8,
            self_pairing=bool(case % 4 == 0),
        )
        result = relation_supervision(f_s, f_t, scores, cfg)
        cases.append(
            {
                "fS": f_s.tolist(),
                "fT": f_t.tolist(),
                "scores": scores.tolist(),
                "scoreThreshold": cfg.score_threshold,
                "epsilonNorm": cfg.epsilon_norm,
                "selfPairing": cfg.self_pairing,
                "loss": result.loss,
                "gradient": result.gradient.tolist(),
                "perObjectLoss": [l for _, l, _ in result.per_object],
            }
        )
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"cases": cases}, fh)


def main():
    root = sys.argv[1] if len(sys.argv) > 1 else "fixtures"
    if os.path.isdir(root):
        shutil.rmtree(root)
    os.makedirs(root)
    make_augment_cases(os.path.join(root, "augment"), 200,
                       np.random.default_rng(424242))
    make_relation_cases(os.path.join(root, "relation.json"), 200,
                        np.random.default_rng(535353))
    print(f"fixtures written under {root}/")


if __name__ == "__main__":
    main()
