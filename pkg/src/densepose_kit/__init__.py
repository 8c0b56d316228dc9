"""Decision core of dense single-stage multi-person pose regression.

Pose encoding and decoding, OKS, positive-sample selection, loss arithmetic,
score-fused pose NMS, COCO keypoint evaluation and a seeded simulator.
"""

__version__ = "0.1.0"

from .assign import AssignerConfig, assign_levels, assign_scene, initial_positives, refinement_positives
from .core import (
    Detection,
    GridLocation,
    GroundTruthInstance,
    Pose,
    PoseHypothesis,
    PseudoBox,
    SkeletonSpec,
    decode_initial,
    decode_refined,
    derive_sampling_offsets,
    grid_locations,
    pseudo_box,
)
from .errors import DensePoseKitError, InputError, NoPositives
from .evaluation import EvalResult, evaluate, load_gt, load_results
from .losses import LossWeights, bce_score_loss, focal_loss, heatmap_loss, l1_regression_loss, total_loss
from .oks import OksScale, compute_oks, instance_scale
from .postprocess import NmsConfig, fuse_confidence, pose_nms

__all__ = [
    "AssignerConfig", "Detection", "DensePoseKitError", "EvalResult", "GridLocation",
    "GroundTruthInstance", "InputError", "LossWeights", "NmsConfig", "NoPositives", "OksScale", "Pose",
    "PoseHypothesis", "PseudoBox", "SkeletonSpec", "assign_levels", "assign_scene", "bce_score_loss",
    "compute_oks", "decode_initial", "decode_refined", "derive_sampling_offsets", "evaluate",
    "focal_loss", "fuse_confidence", "grid_locations", "heatmap_loss", "initial_positives",
    "instance_scale", "l1_regression_loss", "load_gt", "load_results", "pose_nms", "pseudo_box",
    "refinement_positives", "total_loss",
]
