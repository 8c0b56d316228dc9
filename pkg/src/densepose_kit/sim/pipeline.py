"""Scenes and dense predictions through fusion, NMS and evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..core import SkeletonSpec
from ..evaluation import (
    EvalResult,
    GtDataset,
    ImageInfo,
    KeypointAnnotation,
    KeypointResult,
    ResultSet,
    evaluate,
)
from ..postprocess import NmsConfig, pose_nms
from .predict import DenseHypotheses
from .scene import SimScene


@dataclass(frozen=True)
class PipelineConfig:
    nms: NmsConfig = field(default_factory=NmsConfig)
    # Detections below this confidence never reach NMS.
    min_confidence: float = 0.05


def scenes_to_gt(scenes: Sequence[SimScene]) -> GtDataset:
    images, anns = [], []
    next_id = 1
    for img_id, scene in enumerate(scenes, start=1):
        images.append(ImageInfo(img_id, scene.image_w, scene.image_h))
        for inst in scene.instances:
            kps = np.concatenate([inst.pose.keypoints, inst.pose.visibility[:, None]], axis=1)
            anns.append(KeypointAnnotation(next_id, img_id, kps, area=inst.area))
            next_id += 1
    return GtDataset(images, anns)


def detect(dense: DenseHypotheses, score_mode: str, cfg: PipelineConfig, spec: SkeletonSpec):
    dets = dense.detections(score_mode, cfg.min_confidence)
    return pose_nms(dets, cfg.nms, spec)


def results_for(
    denses: Sequence[DenseHypotheses],
    score_mode: str,
    cfg: PipelineConfig,
    spec: SkeletonSpec,
) -> ResultSet:
    results = []
    for img_id, dense in enumerate(denses, start=1):
        for d in detect(dense, score_mode, cfg, spec):
            kps = np.concatenate([d.pose.keypoints, np.ones((d.pose.k, 1))], axis=1)
            results.append(KeypointResult(img_id, kps, d.confidence))
    return ResultSet(results)


def evaluate_predictions(
    scenes: Sequence[SimScene],
    denses: Sequence[DenseHypotheses],
    score_mode: str,
    cfg: PipelineConfig,
    spec: SkeletonSpec,
) -> EvalResult:
    return evaluate(scenes_to_gt(scenes), results_for(denses, score_mode, cfg, spec), spec,
                    max_dets=cfg.nms.max_detections)
