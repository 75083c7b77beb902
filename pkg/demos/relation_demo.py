"""Keypoint relation matrices and their supervision loss, step by step.

Samples teacher/student features at the nine box keypoints of a BEV
feature map, prints both relation matrices, and checks the analytic
gradient against finite differences.
"""

import numpy as np

from geodistill import (
    BevBox,
    FeatureMap,
    RelationConfig,
    extract_keypoints,
    relation_loss,
    relation_loss_gradient,
    sample_features,
    student_relation_matrix,
    teacher_relation_matrix,
)

rng = np.random.default_rng(12)

# two 48x48 maps over [-12, 12]^2 with 8 channels; the student map is a
# noisy linear distortion of the teacher's
teacher_values = rng.normal(size=(48, 48, 8))
mix = np.eye(8) + 0.25 * rng.normal(size=(8, 8))
student_values = teacher_values @ mix.T + 0.05 * rng.normal(size=(48, 48, 8))
extent = (-12.0, 12.0, -12.0, 12.0)
teacher_map = FeatureMap(teacher_values, extent)
student_map = FeatureMap(student_values, extent)

box = BevBox(center=(1.5, -2.0), dims=(4.2, 1.8), yaw=0.6)
keypoints = extract_keypoints(box)
print("keypoints (center, 4 edge midpoints, 4 corners):")
print(keypoints.points.round(2))

f_t, _ = sample_features(teacher_map, keypoints)
f_s, _ = sample_features(student_map, keypoints)

m_t = teacher_relation_matrix(f_t)
m_s = student_relation_matrix(f_s, f_t)
print("\nteacher relation matrix (symmetric, unit diagonal):")
print(m_t.values.round(3))
print("\nstudent relation matrix (student rows vs teacher columns):")
print(m_s.values.round(3))
print(f"\nper-object relation loss: {relation_loss(m_s, m_t):.5f}")

cfg = RelationConfig(score_threshold=0.0)
score = 0.85
loss, grad = relation_loss_gradient(f_s, f_t, score, cfg)
print(f"score-weighted loss ({score} weight): {loss:.5f}")

step = 1e-5
probe = f_s.copy()
probe[3, 2] += step
up, _ = relation_loss_gradient(probe, f_t, score, cfg)
probe[3, 2] -= 2 * step
down, _ = relation_loss_gradient(probe, f_t, score, cfg)
fd = (up - down) / (2 * step)
print(f"gradient[3, 2]: analytic {grad[3, 2]:+.8f}, finite diff {fd:+.8f}")
