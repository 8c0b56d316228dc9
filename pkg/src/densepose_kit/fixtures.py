"""JSON fixtures shared by the command-line tools.

A simulation fixture is an object with a COCO-style ``gt`` dataset and a
``hypotheses`` list. Each hypothesis names its image and grid location and
carries both offset sets (flattened x, y pairs), the two predicted scores and
the true OKS of its refined pose. Every location assigned to a person is
listed; background locations appear only when their classification score
reaches the pipeline's confidence floor.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .core import GridLocation, GroundTruthInstance, Pose, PoseHypothesis, decode_refined
from .errors import InputError, SchemaError
from .evaluation import GtDataset, parse_gt, parse_results
from .postprocess import fuse_confidence
from .sim.pipeline import PipelineConfig, scenes_to_gt
from .sim.predict import DenseHypotheses
from .sim.scene import SimScene


@dataclass(eq=False)
class FixtureHypothesis:
    image_id: int
    hypothesis: PoseHypothesis
    oks: float | None = None


def _field(obj, key: str, where: str):
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    if key not in obj:
        raise SchemaError(f"{where}: missing required field '{key}'")
    return obj[key]


def _pairs(flat, k: int, where: str) -> np.ndarray:
    if not isinstance(flat, list) or len(flat) != 2 * k:
        raise SchemaError(f"{where}: expected a list of {2 * k} numbers")
    try:
        arr = np.asarray(flat, dtype=float).reshape(k, 2)
    except (TypeError, ValueError):
        raise SchemaError(f"{where}: offsets must be numbers") from None
    if not np.all(np.isfinite(arr)):
        raise SchemaError(f"{where}: offsets must be finite")
    return arr


def dense_to_records(dense: DenseHypotheses, image_id: int, min_confidence: float) -> list[dict]:
    lay = dense.layout
    keep = np.flatnonzero(lay.foreground | (dense.cls_score >= min_confidence))
    return [
        {
            "image_id": image_id,
            "level": int(lay.level[n]), "ix": int(lay.ix[n]), "iy": int(lay.iy[n]),
            "offsets1": dense.offsets1[n].ravel().tolist(),
            "offsets2": dense.offsets2[n].ravel().tolist(),
            "cls_score": float(dense.cls_score[n]),
            "pose_score": float(dense.pose_score[n]),
            "oks": float(dense.quality[n]),
        }
        for n in keep
    ]


def simulation_fixture(
    scenes: Sequence[SimScene],
    denses: Sequence[DenseHypotheses],
    pipeline: PipelineConfig,
) -> dict:
    records = []
    for img_id, dense in enumerate(denses, start=1):
        records.extend(dense_to_records(dense, img_id, pipeline.min_confidence))
    return {"gt": scenes_to_gt(scenes).to_dict(), "hypotheses": records}


def parse_hypotheses(data: Any, k: int) -> list[FixtureHypothesis]:
    if isinstance(data, dict):
        data = _field(data, "hypotheses", "fixture")
    if not isinstance(data, list):
        raise SchemaError("hypotheses must be a JSON list")
    out = []
    for n, rec in enumerate(data):
        where = f"hypotheses[{n}]"
        try:
            loc = GridLocation(int(_field(rec, "level", where)), int(_field(rec, "ix", where)),
                               int(_field(rec, "iy", where)))
            hyp = PoseHypothesis(loc, _pairs(_field(rec, "offsets1", where), k, where + ".offsets1"),
                                 _pairs(_field(rec, "offsets2", where), k, where + ".offsets2"),
                                 float(rec.get("cls_score", 0.0)), float(rec.get("pose_score", 0.0)))
        except InputError:
            raise
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{where}: {exc}") from None
        oks = rec.get("oks")
        out.append(FixtureHypothesis(int(rec.get("image_id", 1)), hyp, None if oks is None else float(oks)))
    return out


def fixture_gt(data: Any, k: int) -> GtDataset:
    if isinstance(data, dict) and "gt" in data:
        data = data["gt"]
    return parse_gt(data, k)


def fixture_results(data: Any, k: int):
    if isinstance(data, dict) and "results" in data:
        data = data["results"]
    return parse_results(data, k)


def gt_instances(gt: GtDataset) -> dict[int, list[GroundTruthInstance]]:
    """Per-image instances; annotations without labeled keypoints or marked crowd are skipped."""
    out: dict[int, list[GroundTruthInstance]] = defaultdict(list)
    for ann in gt.annotations:
        if ann.iscrowd or ann.num_keypoints == 0:
            continue
        pose = Pose(ann.keypoints[:, :2], ann.keypoints[:, 2].astype(int))
        out[ann.image_id].append(GroundTruthInstance(pose, ann.area, ann.id))
    return out


def hypothesis_confidence(fh: FixtureHypothesis, score_mode: str) -> float:
    h = fh.hypothesis
    return fuse_confidence(h.cls_score, h.pose_score, score_mode, fh.oks)


def refined_pose(fh: FixtureHypothesis) -> Pose:
    return decode_refined(fh.hypothesis)
