import math
import os

import numpy as np
import pytest

from geodistill.augment import PseudoLabel
from geodistill.cli import main
from geodistill.formats import (
    read_cloud,
    write_cloud,
    write_feature_map,
    write_labels,
)
from geodistill.geometry import Box3D, PointCloud
from geodistill.relation import FeatureMap


@pytest.fixture
def scene_files(tmp_path):
    rng = np.random.default_rng(21)
    box = Box3D(center=(6.0, -4.0, 0.8), dims=(4.2, 1.8, 1.6), yaw=0.5)
    canon = rng.uniform(-0.49, 0.49, (80, 3)) * box.dims
    inside = np.hstack([box.to_world(canon), rng.uniform(0, 1, (80, 1))])
    background = np.hstack(
        [rng.uniform(-40, 40, (200, 2)), rng.uniform(-1, 3, (200, 1)),
         rng.uniform(0, 1, (200, 1))]
    )
    cloud = PointCloud(np.vstack([inside, background]).astype(np.float32))
    cloud_path = tmp_path / "scene.gpc"
    labels_path = tmp_path / "scene_labels.txt"
    write_cloud(cloud_path, cloud)
    write_labels(labels_path,
                 [PseudoLabel(box=box, class_id=0, score=0.95)])
    return cloud_path, labels_path, cloud


class TestAugmentCommand:
    def test_defaults_echoed_and_deterministic(self, scene_files, tmp_path):
        cloud_path, labels_path, _ = scene_files
        out_a = tmp_path / "a.gpc"
        out_b = tmp_path / "b.gpc"
        rep_a = tmp_path / "a.txt"
        rep_b = tmp_path / "b.txt"
        for out, rep in ((out_a, rep_a), (out_b, rep_b)):
            code = main([
                "augment", "--input", str(cloud_path), "--labels", str(labels_path),
                "--output", str(out), "--report", str(rep), "--seed", "11",
            ])
            assert code == 0
        assert out_a.read_bytes() == out_b.read_bytes()
        assert rep_a.read_text().replace("a.", "b.") != ""
        header = rep_a.read_text().splitlines()[1]
        assert "grid=4x2x1" in header
        assert "c_decay=0.05" in header
        assert "tau_aug=0.7" in header

    def test_guard_saturation_identity(self, scene_files, tmp_path):
        cloud_path, labels_path, cloud = scene_files
        out = tmp_path / "out.gpc"
        code = main([
            "augment", "--input", str(cloud_path), "--labels", str(labels_path),
            "--output", str(out), "--mode", "dropout",
            "--np-min", str(10 ** 9), "--c-decay", "1.0",
        ])
        assert code == 0
        assert read_cloud(out).points.tobytes() == cloud.points.tobytes()

    def test_malformed_input_exit_2(self, tmp_path):
        bad = tmp_path / "bad.gpc"
        bad.write_bytes(b"JUNKJUNKJUNK")
        labels = tmp_path / "labels.txt"
        labels.write_text("0 0 0 0 1 1 1 0 0.5\n")
        out = tmp_path / "out.gpc"
        code = main(["augment", "--input", str(bad), "--labels", str(labels),
                     "--output", str(out)])
        assert code == 2
        assert not out.exists()

    def test_missing_input_exit_2(self, tmp_path):
        code = main(["augment", "--input", str(tmp_path / "nope.gpc"),
                     "--labels", str(tmp_path / "nope.txt"),
                     "--output", str(tmp_path / "out.gpc")])
        assert code == 2

    def test_bad_flags_exit_3(self, scene_files, tmp_path):
        cloud_path, labels_path, _ = scene_files
        out = tmp_path / "out.gpc"
        base = ["augment", "--input", str(cloud_path), "--labels",
                str(labels_path), "--output", str(out)]
        assert main(base + ["--grid", "4x2"]) == 3
        assert main(base + ["--c-decay", "7.0"]) == 3
        assert main(base + ["--tau-aug", "2.0"]) == 3
        assert main(["augment"]) == 3
        assert not out.exists()

    def test_workers_equivalent(self, scene_files, tmp_path):
        cloud_path, labels_path, _ = scene_files
        outs = []
        for workers in ("1", "3"):
            out = tmp_path / f"w{workers}.gpc"
            code = main([
                "augment", "--input", str(cloud_path), "--labels",
                str(labels_path), "--output", str(out), "--workers", workers,
                "--c-decay", "1.0", "--seed", "5",
            ])
            assert code == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


def keypoint_friendly_map(fill, override_cell=None, override_value=None):
    """Map with 1 m cells centered on integer coordinates, C=2."""
    values = np.zeros((18, 18, 2))
    values[:, :, 0] = fill[0]
    values[:, :, 1] = fill[1]
    if override_cell is not None:
        values[override_cell[0], override_cell[1]] = override_value
    return FeatureMap(values, (-8.5, 9.5, -8.5, 9.5))


class TestRelationEvalCommand:
    def write_box(self, path, score=1.0):
        box = Box3D(center=(0.0, 0.0, 0.8), dims=(4.0, 2.0, 1.6), yaw=0.0)
        write_labels(path, [PseudoLabel(box=box, class_id=0, score=score)])

    def test_same_file_zero_loss(self, tmp_path, capsys):
        fmap = keypoint_friendly_map((1.0, 0.25))
        path = tmp_path / "t.gfm"
        write_feature_map(path, fmap)
        boxes = tmp_path / "boxes.txt"
        self.write_box(boxes)
        out = tmp_path / "metrics.txt"
        code = main([
            "relation-eval", "--teacher-features", str(path),
            "--student-features", str(path), "--boxes", str(boxes),
            "--out", str(out),
        ])
        assert code == 0
        printed = capsys.readouterr().out
        assert "l_relation=0.0" in printed

    def test_lambda_zero_reports_unweighted(self, tmp_path, capsys):
        teacher = keypoint_friendly_map((1.0, 0.0))
        student = keypoint_friendly_map((1.0, 0.0), (9, 10), (0.0, 1.0))
        t_path, s_path = tmp_path / "t.gfm", tmp_path / "s.gfm"
        write_feature_map(t_path, teacher)
        write_feature_map(s_path, student)
        boxes = tmp_path / "boxes.txt"
        self.write_box(boxes)
        out = tmp_path / "m.txt"
        code = main([
            "relation-eval", "--teacher-features", str(t_path),
            "--student-features", str(s_path), "--boxes", str(boxes),
            "--lambda1", "0", "--out", str(out),
        ])
        assert code == 0
        printed = capsys.readouterr().out
        assert "weighted_contribution=0.0" in printed
        l_relation_line = [l for l in printed.splitlines() if l.startswith("l_relation=")][0]
        assert float(l_relation_line.split("=")[1]) > 0.0

    def test_hand_computed_cosines(self, tmp_path):
        # teacher features are u=(1,0) at every keypoint cell except the
        # front-left corner cell (2, 1), which holds (1,1)/sqrt(2); the
        # student deviates to (0,1) there. All keypoints of the axis-aligned
        # 4x2 box at the origin sit exactly on integer cell centers.
        diag = (1.0 / math.sqrt(2.0), 1.0 / math.sqrt(2.0))
        teacher = keypoint_friendly_map((1.0, 0.0), (9, 10), diag)
        student = keypoint_friendly_map((1.0, 0.0), (9, 10), (0.0, 1.0))
        t_path, s_path = tmp_path / "t.gfm", tmp_path / "s.gfm"
        write_feature_map(t_path, teacher)
        write_feature_map(s_path, student)
        boxes = tmp_path / "boxes.txt"
        self.write_box(boxes)
        out = tmp_path / "m.txt"
        code = main([
            "relation-eval", "--teacher-features", str(t_path),
            "--student-features", str(s_path), "--boxes", str(boxes),
            "--out", str(out),
        ])
        assert code == 0
        text = out.read_text().splitlines()
        t_rows, s_rows = [], []
        mode = None
        for line in text:
            if line.startswith("teacher_relations"):
                mode = t_rows
                continue
            if line.startswith("student_relations"):
                mode = s_rows
                continue
            if line.startswith(("object", "l_relation", "weighted", "#")):
                mode = None
                continue
            if mode is not None:
                mode.append([float(v) for v in line.split()])
        m_t = np.array(t_rows)
        m_s = np.array(s_rows)
        # keypoint 8 is the front-left corner; teacher cosine vs others 1/sqrt(2)
        root_half = 1.0 / math.sqrt(2.0)
        assert m_t[0, 0] == pytest.approx(1.0, abs=1e-9)
        assert m_t[0, 8] == pytest.approx(root_half, abs=1e-9)
        assert m_t[8, 0] == pytest.approx(root_half, abs=1e-9)
        # student holds (0,1) there: orthogonal to u, 1/sqrt(2) vs diagonal
        assert m_s[8, 0] == pytest.approx(0.0, abs=1e-9)
        assert m_s[8, 8] == pytest.approx(root_half, abs=1e-9)
        assert m_s[0, 8] == pytest.approx(root_half, abs=1e-9)

    def test_disjoint_extent_exit_4(self, tmp_path):
        teacher = keypoint_friendly_map((1.0, 0.0))
        student = FeatureMap(np.ones((4, 4, 2)), (100.0, 104.0, 100.0, 104.0))
        t_path, s_path = tmp_path / "t.gfm", tmp_path / "s.gfm"
        write_feature_map(t_path, teacher)
        write_feature_map(s_path, student)
        boxes = tmp_path / "boxes.txt"
        self.write_box(boxes)
        code = main([
            "relation-eval", "--teacher-features", str(t_path),
            "--student-features", str(s_path), "--boxes", str(boxes),
            "--out", str(tmp_path / "m.txt"),
        ])
        assert code == 4
        assert not (tmp_path / "m.txt").exists()


class TestSimulateCommand:
    def test_missing_config_exit_2(self, tmp_path):
        code = main(["simulate", "--config", str(tmp_path / "nope.cfg"),
                     "--out", str(tmp_path / "out")])
        assert code == 2

    def test_unknown_key_exit_2(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("[scene]\nbogus_key = 1\n")
        code = main(["simulate", "--config", str(cfg),
                     "--out", str(tmp_path / "out")])
        assert code == 2

    def test_parse_error_exit_2(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("this is not ini\n")
        code = main(["simulate", "--config", str(cfg),
                     "--out", str(tmp_path / "out")])
        assert code == 2

    def test_zero_iterations_empty_series(self, tmp_path):
        cfg = tmp_path / "tiny.cfg"
        cfg.write_text(
            "[scene]\nboxes = 1\nbackground_points = 50\nextent = 30.0\n"
            "min_points = 10\n"
            "[model]\nchannels = 4\nmap_cells = 16\n"
            "[train]\niterations = 0\n"
        )
        out = tmp_path / "out"
        code = main(["simulate", "--config", str(cfg), "--out", str(out)])
        assert code == 0
        lines = (out / "metrics.csv").read_text().splitlines()
        assert lines[0].startswith("iteration,")
        assert lines[1].startswith("#")

    def test_out_path_is_file_exit_5(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("x")
        code = main(["simulate", "--config", None or str(tmp_path / "t.cfg"),
                     "--out", str(blocker)])
        # config missing would exit 2 first; create it
        cfg = tmp_path / "t.cfg"
        cfg.write_text("[train]\niterations = 0\n")
        code = main(["simulate", "--config", str(cfg), "--out", str(blocker)])
        assert code == 5
