"""Command-line surface: batch augmentation, relation evaluation, training.

Exit codes: 0 success, 2 malformed input file or config, 3 invalid flags,
4 semantic failure (disjoint extents, divergence), 5 I/O failure. Failed
invocations leave no partial output files behind.
"""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from . import formats
from .augment import AugmentConfig, augment_scene, decay_probability
from .geometry import extract_keypoints, project_to_bev
from .harness import ConfigError, TrainingDiverged, default_config_path, \
    load_experiment_config, run_experiment
from .relation import (
    RelationConfig,
    align_feature_map,
    relation_loss,
    sample_features,
    student_relation_matrix,
    teacher_relation_matrix,
    weighted_relation_loss,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_FLAGS = 3
EXIT_SEMANTIC = 4
EXIT_IO = 5


class _Parser(argparse.ArgumentParser):
    """argparse with flag errors mapped to exit code 3."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise _FlagError(f"{self.prog}: error: {message}")


class _FlagError(Exception):
    pass


class _AtomicOutputs:
    """Stages output files and publishes them only on success."""

    def __init__(self):
        self.staged = []

    def stage(self, path):
        tmp = f"{path}.tmp.{os.getpid()}"
        self.staged.append((tmp, path))
        return tmp

    def commit(self):
        for tmp, path in self.staged:
            os.replace(tmp, path)
        self.staged = []

    def discard(self):
        for tmp, _ in self.staged:
            try:
                os.unlink(tmp)
            except OSError:
                pass
        self.staged = []


def _parse_grid(text):
    parts = text.lower().split("x")
    if len(parts) != 3:
        raise _FlagError(f"--grid must look like 4x2x1, got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError:
        raise _FlagError(f"--grid must hold integers, got {text!r}")


def _build_parser():
    parser = _Parser(prog="geodistill", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    aug = sub.add_parser("augment", help="augment a cloud file box by box")
    aug.add_argument("--input", required=True, help="input GPC1 cloud file")
    aug.add_argument("--labels", required=True, help="label text file")
    aug.add_argument("--output", required=True, help="output GPC1 cloud file")
    aug.add_argument("--grid", default="4x2x1", help="box voxel grid LxWxH")
    aug.add_argument("--c-decay", type=float, default=0.05)
    aug.add_argument("--d-range", type=float, default=100.0)
    aug.add_argument("--tau-aug", type=float, default=0.7)
    aug.add_argument("--np-min", type=int, default=5)
    aug.add_argument("--mode", default="both",
                     choices=["sparsify", "dropout", "both"])
    aug.add_argument("--keep-ratio", type=float, default=0.5)
    aug.add_argument("--labeled", action="store_true",
                     help="treat boxes as ground truth; ignore scores")
    aug.add_argument("--seed", type=int, default=0)
    aug.add_argument("--workers", type=int, default=1)
    aug.add_argument("--report", default=None, help="per-box report file")

    rel = sub.add_parser("relation-eval",
                         help="relation losses between two feature maps")
    rel.add_argument("--teacher-features", required=True)
    rel.add_argument("--student-features", required=True)
    rel.add_argument("--boxes", required=True, help="label text file")
    rel.add_argument("--lambda1", type=float, default=2.0)
    rel.add_argument("--score-threshold", type=float, default=0.3)
    rel.add_argument("--out", required=True, help="metrics output file")

    sim = sub.add_parser("simulate", help="run a distillation experiment")
    sim.add_argument("--config", default=None,
                     help="experiment config (defaults to the bundled one)")
    sim.add_argument("--out", required=True, help="output directory")
    return parser


def _cmd_augment(args) -> int:
    try:
        cfg = AugmentConfig(
            grid=_parse_grid(args.grid),
            c_decay=args.c_decay,
            d_range=args.d_range,
            n_p_min=args.np_min,
            tau_aug=args.tau_aug,
            mode=args.mode,
            keep_ratio=args.keep_ratio,
            seed=args.seed,
        )
        if args.workers < 1:
            raise ValueError(f"--workers must be >= 1, got {args.workers}")
    except ValueError as exc:
        print(f"geodistill augment: invalid flags: {exc}", file=sys.stderr)
        return EXIT_FLAGS

    cloud = formats.read_cloud(args.input)
    labels = formats.read_labels(args.labels)
    out_cloud, report = augment_scene(cloud, labels, args.labeled, cfg,
                                      workers=args.workers)

    outputs = _AtomicOutputs()
    try:
        formats.write_cloud(outputs.stage(args.output), out_cloud)
        if args.report:
            with open(outputs.stage(args.report), "w", encoding="utf-8",
                      newline="\n") as fh:
                grid = "x".join(str(g) for g in cfg.grid)
                fh.write("# geodistill augment report\n")
                fh.write(
                    f"# input={args.input} labels={args.labels} "
                    f"output={args.output} grid={grid} c_decay={cfg.c_decay!r} "
                    f"d_range={cfg.d_range!r} tau_aug={cfg.tau_aug!r} "
                    f"n_p_min={cfg.n_p_min} mode={cfg.mode} "
                    f"keep_ratio={cfg.keep_ratio!r} "
                    f"labeled={'true' if args.labeled else 'false'} "
                    f"seed={cfg.seed} workers={args.workers}\n"
                )
                fh.write("# columns: index p applied points_before points_after\n")
                for rec in report.records:
                    state = "skipped" if rec.skipped else ("yes" if rec.applied else "no")
                    fh.write(
                        f"{rec.index} {rec.p!r} {state} "
                        f"{rec.points_before} {rec.points_after}\n"
                    )
    except BaseException:
        outputs.discard()
        raise
    outputs.commit()
    return EXIT_OK


def _format_matrix(fh, name, values):
    fh.write(f"{name}\n")
    for row in values:
        fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def _cmd_relation_eval(args) -> int:
    try:
        cfg = RelationConfig(lambda1=args.lambda1,
                             score_threshold=args.score_threshold)
    except ValueError as exc:
        print(f"geodistill relation-eval: invalid flags: {exc}", file=sys.stderr)
        return EXIT_FLAGS

    teacher_map = formats.read_feature_map(args.teacher_features)
    student_map = formats.read_feature_map(args.student_features)
    labels = formats.read_labels(args.boxes)
    if teacher_map.channels != student_map.channels:
        print(
            "geodistill relation-eval: channel counts differ "
            f"({teacher_map.channels} vs {student_map.channels})",
            file=sys.stderr,
        )
        return EXIT_SEMANTIC
    try:
        student_map = align_feature_map(
            student_map, teacher_map.extent, teacher_map.values.shape[:2]
        )
    except ValueError as exc:
        print(f"geodistill relation-eval: alignment failed: {exc}", file=sys.stderr)
        return EXIT_SEMANTIC

    per_object = []
    detail = []
    for i, label in enumerate(labels):
        kps = extract_keypoints(project_to_bev(label.box))
        f_t, _ = sample_features(teacher_map, kps)
        f_s, _ = sample_features(student_map, kps)
        m_t = teacher_relation_matrix(f_t, cfg.epsilon_norm)
        m_s = student_relation_matrix(f_s, f_t, cfg.epsilon_norm)
        l_delta = relation_loss(m_s, m_t)
        per_object.append((label.score, l_delta))
        detail.append((i, label.score, l_delta, m_t, m_s))

    l_relation = weighted_relation_loss(per_object, cfg.score_threshold)
    contribution = cfg.lambda1 * l_relation

    outputs = _AtomicOutputs()
    try:
        with open(outputs.stage(args.out), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("# geodistill relation-eval\n")
            fh.write(
                f"# teacher={args.teacher_features} student={args.student_features} "
                f"boxes={args.boxes} lambda1={cfg.lambda1!r} "
                f"score_threshold={cfg.score_threshold!r}\n"
            )
            for i, score, l_delta, m_t, m_s in detail:
                included = "yes" if score >= cfg.score_threshold else "no"
                fh.write(
                    f"object {i} score={score!r} l_delta={l_delta!r} "
                    f"included={included}\n"
                )
                _format_matrix(fh, f"teacher_relations {i}", m_t.values)
                _format_matrix(fh, f"student_relations {i}", m_s.values)
            fh.write(f"l_relation={l_relation!r}\n")
            fh.write(f"weighted_contribution={contribution!r}\n")
    except BaseException:
        outputs.discard()
        raise
    outputs.commit()

    for i, score, l_delta, _, _ in detail:
        included = "yes" if score >= cfg.score_threshold else "no"
        print(f"object {i} score={score!r} l_delta={l_delta!r} included={included}")
    print(f"l_relation={l_relation!r}")
    print(f"weighted_contribution={contribution!r}")
    return EXIT_OK


def _cmd_simulate(args) -> int:
    config_path = args.config or default_config_path()
    config = load_experiment_config(config_path)
    os.makedirs(args.out, exist_ok=True)
    if not os.path.isdir(args.out):
        raise OSError(f"{args.out} is not a directory")
    report = run_experiment(config, out_dir=args.out)
    final = report.steps[-1].rel_diff if report.steps else float("nan")
    print(f"iterations={len(report.steps)}")
    print(f"final_rel_diff={final!r}")
    print(f"converged={'yes' if report.converged else 'no'}")
    print(f"metrics={os.path.join(args.out, 'metrics.csv')}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "augment":
            return _cmd_augment(args)
        if args.command == "relation-eval":
            return _cmd_relation_eval(args)
        return _cmd_simulate(args)
    except _FlagError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_FLAGS
    except (formats.FileFormatError, ConfigError) as exc:
        print(f"geodistill: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"geodistill: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except TrainingDiverged as exc:
        print(f"geodistill: {exc}", file=sys.stderr)
        return EXIT_SEMANTIC
    except OSError as exc:
        print(f"geodistill: {exc}", file=sys.stderr)
        return EXIT_IO


def entrypoint():
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
