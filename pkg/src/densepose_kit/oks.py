"""Object Keypoint Similarity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GroundTruthInstance, Pose, PseudoBox, SkeletonSpec, pseudo_box
from .errors import NoLabeledKeypoints, ShapeMismatch

# Fallback when an instance carries no annotated area (reference COCO tooling convention).
BOX_AREA_FACTOR = 0.53
# Keeps s^2 positive for degenerate single-point boxes.
MIN_SCALE_SQUARED = float(np.spacing(1))


@dataclass(frozen=True)
class OksScale:
    s_squared: float

    def __post_init__(self):
        if not self.s_squared > 0:
            raise ValueError(f"s_squared must be positive, got {self.s_squared}")


def scale_from_box(box: PseudoBox) -> OksScale:
    return OksScale(max(box.area * BOX_AREA_FACTOR, MIN_SCALE_SQUARED))


def instance_scale(gt: GroundTruthInstance, use_area: bool = True) -> OksScale:
    """s^2 for an instance: annotated area when present (and wanted), else 0.53 x pseudo-box area."""
    if use_area and gt.area is not None:
        return OksScale(float(gt.area))
    return scale_from_box(gt.pseudo_box)


def pose_scale(pose: Pose) -> OksScale:
    return scale_from_box(pseudo_box(pose))


def compute_oks(pred: Pose, gt: Pose, scale: OksScale, spec: SkeletonSpec) -> float:
    """Mean keypoint similarity over the keypoints labeled in ``gt``.

    Visibility of ``pred`` is ignored; only ``gt.visibility`` selects terms.
    """
    if pred.k != gt.k or gt.k != spec.k:
        raise ShapeMismatch(f"pose sizes {pred.k}/{gt.k} do not match skeleton k={spec.k}")
    mask = gt.labeled
    if not mask.any():
        raise NoLabeledKeypoints("OKS is undefined when the ground truth has no labeled keypoints")
    d2 = np.sum((pred.keypoints - gt.keypoints) ** 2, axis=1)
    k2 = spec.kappa_array ** 2
    terms = np.exp(-d2[mask] / (2.0 * scale.s_squared * k2[mask]))
    return float(terms.mean())


def oks_matrix(
    preds: np.ndarray,
    gts: np.ndarray,
    gt_labeled: np.ndarray,
    s_squared: np.ndarray,
    kappas: np.ndarray,
) -> np.ndarray:
    """Batched OKS: ``preds`` (N, K, 2) against ``gts`` (M, K, 2).

    ``gt_labeled`` is an (M, K) boolean mask and ``s_squared`` an (M,) array.
    Ground truths without labeled keypoints get OKS 0 in every row.
    """
    preds = np.asarray(preds, dtype=float)
    gts = np.asarray(gts, dtype=float)
    if preds.shape[0] == 0 or gts.shape[0] == 0:
        return np.zeros((preds.shape[0], gts.shape[0]))
    d2 = np.sum((preds[:, None] - gts[None]) ** 2, axis=-1)
    denom = 2.0 * np.asarray(s_squared, dtype=float)[None, :, None] * (np.asarray(kappas) ** 2)[None, None, :]
    mask = np.asarray(gt_labeled, dtype=bool)[None]
    terms = np.where(mask, np.exp(-d2 / denom), 0.0)
    counts = mask.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = terms.sum(axis=-1) / counts
    return np.where(counts > 0, out, 0.0)


def paired_oks(
    preds: np.ndarray,
    gts: np.ndarray,
    gt_labeled: np.ndarray,
    s_squared: np.ndarray,
    kappas: np.ndarray,
) -> np.ndarray:
    """Row-wise OKS of ``preds[n]`` against ``gts[n]``; rows without labeled keypoints give 0."""
    d2 = np.sum((np.asarray(preds, float) - np.asarray(gts, float)) ** 2, axis=-1)
    denom = 2.0 * np.asarray(s_squared, float)[:, None] * np.asarray(kappas, float)[None, :] ** 2
    mask = np.asarray(gt_labeled, bool)
    terms = np.where(mask, np.exp(-d2 / denom), 0.0)
    counts = mask.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = terms.sum(axis=-1) / counts
    return np.where(counts > 0, out, 0.0)
