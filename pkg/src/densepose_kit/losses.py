"""Loss values for the five training terms and their weighted total.

Values only; nothing here differentiates. Logs clamp their argument at
``EPS`` while the focal modulating factors use the raw probabilities, so a
perfect prediction scores exactly zero.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import GroundTruthInstance, Pose, PoseHypothesis, decode_initial, decode_refined
from .errors import EmptyPositiveSetWarning, InvalidConfig, ShapeMismatch

EPS = 1e-6
HEATMAP_STRIDE = 8


@dataclass(frozen=True)
class LossWeights:
    cls: float = 1.0
    heatmap: float = 4.0
    reg_initial: float = 0.05
    reg_refined: float = 0.1
    psm: float = 1.0

    def __post_init__(self):
        if any(w < 0 for w in self.as_tuple()):
            raise InvalidConfig("loss weights must be non-negative")

    def as_tuple(self) -> tuple[float, float, float, float, float]:
        return (self.cls, self.heatmap, self.reg_initial, self.reg_refined, self.psm)


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 0.25
    gamma: float = 2.0
    heatmap_beta: float = 4.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0 or self.gamma < 0 or self.heatmap_beta < 0:
            raise InvalidConfig("focal params need alpha in (0,1), gamma >= 0, beta >= 0")


def _log(x):
    return np.log(np.maximum(x, EPS))


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"prediction shape {a.shape} != target shape {b.shape}")


def focal_loss(pred_probs, targets, params: FocalParams = FocalParams()) -> float:
    """Sigmoid focal loss summed over cells, divided by max(#positives, 1)."""
    p = np.asarray(pred_probs, dtype=float)
    t = np.asarray(targets, dtype=float)
    _check_shapes(p, t)
    pos = t == 1
    p_t = np.where(pos, p, 1.0 - p)
    alpha_t = np.where(pos, params.alpha, 1.0 - params.alpha)
    per_cell = -alpha_t * (1.0 - p_t) ** params.gamma * _log(p_t)
    return float(per_cell.sum() / max(int(pos.sum()), 1))


def gaussian_heatmap_targets(
    instances: Sequence[GroundTruthInstance],
    image_w: int,
    image_h: int,
    k: int | None = None,
    sigma: float = 2.0,
    stride: int = HEATMAP_STRIDE,
) -> np.ndarray:
    """One Gaussian channel per keypoint type on the stride-8 grid.

    Keypoints are mapped to feature units with cell centres at integer
    indices (``x / stride - 0.5``). Instances are max-combined and the
    nearest cell of every labeled keypoint is set to exactly 1.

    Returns:
        (K, rows, cols) array with values in [0, 1].
    """
    rows, cols = math.ceil(image_h / stride), math.ceil(image_w / stride)
    if k is None:
        k = instances[0].pose.k if instances else 0
    out = np.zeros((k, rows, cols))
    gy, gx = np.mgrid[0:rows, 0:cols]
    for inst in instances:
        pose = inst.pose
        for j in np.flatnonzero(pose.labeled):
            kx, ky = pose.keypoints[j] / stride - 0.5
            g = np.exp(-((gx - kx) ** 2 + (gy - ky) ** 2) / (2.0 * sigma**2))
            np.maximum(out[j], g, out=out[j])
            cx, cy = math.floor(kx + 0.5), math.floor(ky + 0.5)
            if 0 <= cx < cols and 0 <= cy < rows:
                out[j, cy, cx] = 1.0
    return out


def heatmap_loss(pred, target, params: FocalParams = FocalParams()) -> float:
    """Penalty-reduced focal loss for Gaussian targets, divided by max(#peaks, 1)."""
    p = np.asarray(pred, dtype=float)
    t = np.asarray(target, dtype=float)
    _check_shapes(p, t)
    pos = t == 1
    g = params.gamma
    pos_term = -((1.0 - p) ** g) * _log(p)
    neg_term = -((1.0 - t) ** params.heatmap_beta) * p**g * _log(1.0 - p)
    total = np.where(pos, pos_term, neg_term).sum()
    return float(total / max(int(pos.sum()), 1))


def l1_regression_loss(
    pairs: Sequence[tuple[PoseHypothesis, Pose]],
    stage: str = "initial",
) -> float:
    """Mean absolute stride-normalised keypoint error over positive (hypothesis, gt) pairs.

    Averages over positives, labeled GT keypoints and both coordinates. An
    empty positive set yields 0.0 with an :class:`EmptyPositiveSetWarning`.
    """
    if stage not in ("initial", "refined"):
        raise ValueError(f"stage must be 'initial' or 'refined', got {stage!r}")
    decode = decode_initial if stage == "initial" else decode_refined
    total, count = 0.0, 0
    for h, gt in pairs:
        mask = gt.labeled
        resid = np.abs(decode(h).keypoints[mask] - gt.keypoints[mask]) / h.location.stride
        total += resid.sum()
        count += resid.size
    if count == 0:
        warnings.warn("no positives (or no labeled keypoints); regression loss set to 0",
                      EmptyPositiveSetWarning, stacklevel=2)
        return 0.0
    return float(total / count)


def bce_score_loss(pred_scores, psm_targets) -> float:
    p = np.asarray(pred_scores, dtype=float)
    t = np.asarray(psm_targets, dtype=float)
    _check_shapes(p, t)
    if p.size == 0:
        return 0.0
    return float(np.mean(-(t * _log(p) + (1.0 - t) * _log(1.0 - p))))


def total_loss(components: Sequence[float], w: LossWeights = LossWeights()) -> float:
    """Weighted sum of (cls, heatmap, reg_initial, reg_refined, psm), correctly rounded."""
    components = tuple(float(c) for c in components)
    if len(components) != 5:
        raise ShapeMismatch("total_loss needs exactly five components")
    return math.fsum(c * wi for c, wi in zip(components, w.as_tuple()))
