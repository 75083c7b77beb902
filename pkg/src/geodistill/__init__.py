"""Box-aware point-cloud augmentation and keypoint relation distillation.

The library is plain numpy. ``geometry`` holds the domain types and
deterministic primitives, ``augment`` the distance-decayed per-box point
dropping engine, ``relation`` the keypoint relation matrices, losses, and
analytic gradients, ``harness`` a desk-scale teacher-student training
loop, and ``formats``/``cli`` the file formats and command-line surface.
"""

from .geometry import (
    Box3D,
    BevBox,
    BoxVoxelGrid,
    KeypointSet,
    PointCloud,
    extract_keypoints,
    project_to_bev,
    voxelize_box,
    wrap_angle,
)
from .augment import (
    CLOCKWISE,
    COUNTERCLOCKWISE,
    AugmentConfig,
    AugmentReport,
    PseudoLabel,
    augment_scene,
    decay_probability,
    voxel_order_dropout,
    voxel_sparsify,
)
from .relation import (
    FeatureMap,
    RelationConfig,
    RelationMatrix,
    align_feature_map,
    cosine_similarity,
    relation_loss,
    relation_loss_gradient,
    relation_supervision,
    sample_features,
    student_relation_matrix,
    teacher_relation_matrix,
    total_loss,
    weighted_relation_loss,
)
from .harness import (
    LabelNoise,
    SceneSpec,
    SyntheticScene,
    ToyExtractor,
    TrainReport,
    default_config_path,
    distill_step,
    generate_scene,
    load_experiment_config,
    run_experiment,
    teacher_pseudo_labels,
)
from .formats import (
    FileFormatError,
    read_cloud,
    read_feature_map,
    read_labels,
    write_cloud,
    write_feature_map,
    write_labels,
)

__version__ = "0.1.0"
