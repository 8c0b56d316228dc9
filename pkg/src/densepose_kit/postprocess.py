"""Score fusion, level merging and OKS-based pose NMS."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .core import Detection, SkeletonSpec
from .errors import InvalidConfig, OutOfRange
from .oks import BOX_AREA_FACTOR, MIN_SCALE_SQUARED, oks_matrix

NMS_MODES = ("hard", "soft-linear", "soft-gaussian")
SCORE_MODES = ("fused", "cls", "gt-oks")


@dataclass(frozen=True)
class NmsConfig:
    oks_threshold: float = 0.3
    mode: str = "hard"
    soft_sigma: float = 0.5
    score_floor: float = 0.05
    max_detections: int = 100

    def __post_init__(self):
        if not 0.0 <= self.oks_threshold <= 1.0:
            raise InvalidConfig("oks_threshold must be in [0, 1]")
        if not 0.0 <= self.score_floor < 1.0:
            raise InvalidConfig("score_floor must be in [0, 1)")
        if self.mode not in NMS_MODES:
            raise InvalidConfig(f"NMS mode must be one of {NMS_MODES}")
        if self.soft_sigma <= 0 or self.max_detections < 1:
            raise InvalidConfig("soft_sigma must be positive and max_detections >= 1")


def fuse_confidence(
    cls_score: float,
    pose_score: float,
    mode: str = "fused",
    oracle_score: float | None = None,
) -> float:
    """Detection confidence used to rank poses in NMS.

    ``fused`` multiplies the classification and pose scores, ``cls`` ignores
    the pose score, and ``gt-oks`` returns ``oracle_score`` (typically the
    true OKS of the pose) in place of both.
    """
    for name, v in (("cls_score", cls_score), ("pose_score", pose_score)):
        if not 0.0 <= v <= 1.0:
            raise OutOfRange(f"{name}={v} outside [0, 1]")
    if mode == "fused":
        return float(cls_score) * float(pose_score)
    if mode == "cls":
        return float(cls_score)
    if mode == "gt-oks":
        if oracle_score is None or not 0.0 <= oracle_score <= 1.0:
            raise OutOfRange("gt-oks mode needs an oracle score in [0, 1]")
        return float(oracle_score)
    raise InvalidConfig(f"score mode must be one of {SCORE_MODES}")


def _rank_key(d: Detection):
    return (-d.confidence, d.source_level, d.index)


def merge_levels(per_level: Iterable[Sequence[Detection]]) -> list[Detection]:
    """Concatenate per-level lists and sort by confidence, then (level, index)."""
    merged = [d for dets in per_level for d in dets]
    return sorted(merged, key=_rank_key)


def _stack(dets: Sequence[Detection]) -> tuple[np.ndarray, np.ndarray]:
    poses = np.stack([d.pose.keypoints for d in dets])
    span = poses.max(axis=1) - poses.min(axis=1)
    s2 = np.maximum(span[:, 0] * span[:, 1] * BOX_AREA_FACTOR, MIN_SCALE_SQUARED)
    return poses, s2


def pose_nms(dets: Sequence[Detection], cfg: NmsConfig, spec: SkeletonSpec) -> list[Detection]:
    """Greedy OKS suppression (hard) or score decay (soft).

    Similarity of a candidate to an already kept detection is
    OKS(candidate, kept) with every keypoint of the kept pose counted and
    s^2 = 0.53 x the kept pose's box area.
    """
    if not dets:
        return []
    order = sorted(dets, key=_rank_key)
    poses, s2 = _stack(order)
    labeled = np.ones(poses.shape[:2], dtype=bool)
    kappas = spec.kappa_array
    n = len(order)

    if cfg.mode == "hard":
        alive = np.ones(n, dtype=bool)
        keep: list[Detection] = []
        for i in range(n):
            if not alive[i]:
                continue
            keep.append(order[i])
            if len(keep) == cfg.max_detections:
                break
            rest = np.flatnonzero(alive[i + 1:]) + i + 1
            if rest.size:
                sim = oks_matrix(poses[rest], poses[i:i + 1], labeled[i:i + 1], s2[i:i + 1], kappas)[:, 0]
                alive[rest[sim >= cfg.oks_threshold]] = False
        return keep

    scores = np.array([d.confidence for d in order])
    remaining = list(range(n))
    kept: list[tuple[int, float]] = []
    while remaining and len(kept) < cfg.max_detections:
        # First maximum in rank order keeps the tie-break deterministic.
        best_pos = int(np.argmax(scores[remaining]))
        i = remaining.pop(best_pos)
        if scores[i] < cfg.score_floor:
            break
        kept.append((i, float(scores[i])))
        if not remaining:
            break
        rest = np.array(remaining)
        sim = oks_matrix(poses[rest], poses[i:i + 1], labeled[i:i + 1], s2[i:i + 1], kappas)[:, 0]
        if cfg.mode == "soft-linear":
            decay = np.where(sim >= cfg.oks_threshold, 1.0 - sim, 1.0)
        else:
            decay = np.exp(-(sim**2) / cfg.soft_sigma)
        scores[rest] *= decay
    out = [replace(order[i], confidence=s) for i, s in kept if s >= cfg.score_floor]
    return sorted(out, key=_rank_key)
