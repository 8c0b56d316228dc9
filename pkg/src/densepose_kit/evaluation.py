"""COCO keypoint files and OKS-based AP/AR.

The protocol mirrors the public COCO keypoint evaluation: per-image
detections sorted by score and capped, greedy matching to the best
still-unmatched ground truth at each OKS threshold (0.50:0.05:0.95),
101-point interpolated precision, and medium/large buckets by GT area.
Crowd annotations and annotations without labeled keypoints are ignore
regions: a detection matched to one is neither a true nor a false positive.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .core import SkeletonSpec
from .errors import LengthError, ParseError, SchemaError, UnknownImageId
from .oks import BOX_AREA_FACTOR, oks_matrix

OKS_THRESHOLDS = np.round(np.arange(0.5, 0.951, 0.05), 2)
RECALL_POINTS = np.linspace(0.0, 1.0, 101)
AREA_RANGES = {
    "all": (0.0, math.inf),
    "medium": (32.0**2, 96.0**2),
    "large": (96.0**2, math.inf),
}
MAX_DETECTIONS = 100
METRIC_NAMES = ("AP", "AP50", "AP75", "APM", "APL", "AR")


@dataclass(frozen=True)
class ImageInfo:
    id: int
    width: int
    height: int


@dataclass(eq=False)
class KeypointAnnotation:
    id: int
    image_id: int
    keypoints: np.ndarray  # (K, 3)
    area: float | None = None
    bbox: list[float] | None = None
    iscrowd: int = 0
    category_id: int = 1

    @property
    def num_keypoints(self) -> int:
        return int(np.count_nonzero(self.keypoints[:, 2] > 0))

    def effective_area(self) -> float:
        if self.area is not None:
            return float(self.area)
        labeled = self.keypoints[self.keypoints[:, 2] > 0, :2]
        if len(labeled) == 0:
            return 0.0
        w, h = labeled.max(axis=0) - labeled.min(axis=0)
        return float(w * h * BOX_AREA_FACTOR)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "id": self.id,
            "image_id": self.image_id,
            "category_id": self.category_id,
            "keypoints": [float(x) if i % 3 < 2 else int(x) for i, x in enumerate(self.keypoints.ravel())],
            "num_keypoints": self.num_keypoints,
            "iscrowd": self.iscrowd,
        }
        if self.area is not None:
            out["area"] = self.area
        if self.bbox is not None:
            out["bbox"] = list(self.bbox)
        return out


@dataclass(eq=False)
class KeypointResult:
    image_id: int
    keypoints: np.ndarray  # (K, 3)
    score: float
    category_id: int = 1

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "category_id": self.category_id,
            "keypoints": [float(x) for x in self.keypoints.ravel()],
            "score": self.score,
        }


@dataclass
class GtDataset:
    images: list[ImageInfo]
    annotations: list[KeypointAnnotation]
    categories: list[dict] = field(default_factory=lambda: [{"id": 1, "name": "person"}])

    def to_dict(self) -> dict:
        return {
            "images": [{"id": i.id, "width": i.width, "height": i.height} for i in self.images],
            "annotations": [a.to_dict() for a in self.annotations],
            "categories": self.categories,
        }


@dataclass
class ResultSet:
    results: list[KeypointResult]

    def to_list(self) -> list[dict]:
        return [r.to_dict() for r in self.results]


@dataclass(frozen=True)
class EvalResult:
    ap: float
    ap50: float
    ap75: float
    ap_medium: float
    ap_large: float
    ar: float

    def as_tuple(self) -> tuple[float, ...]:
        return (self.ap, self.ap50, self.ap75, self.ap_medium, self.ap_large, self.ar)

    def to_dict(self) -> dict[str, float]:
        return dict(zip(METRIC_NAMES, self.as_tuple()))

    def table_row(self, label: str = "") -> str:
        cells = " ".join(f"{100 * v:5.1f}" if v >= 0 else "  n/a" for v in self.as_tuple())
        return f"{label:<12s} {cells}".rstrip()


def table_header() -> str:
    return f"{'':<12s} " + " ".join(f"{n:>5s}" for n in METRIC_NAMES)


def _read_json(path: str | Path):
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from None


def _require(obj: dict, key: str, where: str):
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    if key not in obj:
        raise SchemaError(f"{where}: missing required field '{key}'")
    return obj[key]


def _keypoints(flat, k: int, where: str) -> np.ndarray:
    if not isinstance(flat, list):
        raise SchemaError(f"{where}: 'keypoints' must be a list")
    if len(flat) != 3 * k:
        raise LengthError(f"{where}: keypoints has length {len(flat)}, expected {3 * k}")
    try:
        return np.asarray(flat, dtype=float).reshape(k, 3)
    except (TypeError, ValueError):
        raise SchemaError(f"{where}: keypoints must be numbers") from None


def parse_gt(data: Any, k: int = 17) -> GtDataset:
    if not isinstance(data, dict):
        raise SchemaError("ground-truth file must be a JSON object")
    images = []
    for n, img in enumerate(_require(data, "images", "gt")):
        where = f"images[{n}]"
        images.append(ImageInfo(int(_require(img, "id", where)),
                                int(_require(img, "width", where)), int(_require(img, "height", where))))
    anns = []
    for n, ann in enumerate(_require(data, "annotations", "gt")):
        where = f"annotations[{n}]"
        area = ann.get("area")
        anns.append(KeypointAnnotation(
            id=int(_require(ann, "id", where)),
            image_id=int(_require(ann, "image_id", where)),
            keypoints=_keypoints(_require(ann, "keypoints", where), k, where),
            area=None if area is None else float(area),
            bbox=ann.get("bbox"),
            iscrowd=int(ann.get("iscrowd", 0)),
            category_id=int(ann.get("category_id", 1)),
        ))
    for name, items in (("image", images), ("annotation", anns)):
        ids = [x.id for x in items]
        if len(ids) != len(set(ids)):
            raise SchemaError(f"duplicate {name} ids")
    cats = data.get("categories") or [{"id": 1, "name": "person"}]
    return GtDataset(images, anns, cats)


def parse_results(data: Any, k: int = 17) -> ResultSet:
    if isinstance(data, dict) and "annotations" in data:
        data = data["annotations"]
    if not isinstance(data, list):
        raise SchemaError("results file must be a JSON list")
    out = []
    for n, r in enumerate(data):
        where = f"results[{n}]"
        out.append(KeypointResult(
            image_id=int(_require(r, "image_id", where)),
            keypoints=_keypoints(_require(r, "keypoints", where), k, where),
            score=float(_require(r, "score", where)),
            category_id=int(r.get("category_id", 1)),
        ))
    return ResultSet(out)


def load_gt(path: str | Path, k: int = 17) -> GtDataset:
    return parse_gt(_read_json(path), k)


def load_results(path: str | Path, k: int = 17) -> ResultSet:
    return parse_results(_read_json(path), k)


@dataclass
class _ImageMatches:
    scores: np.ndarray          # (D,)
    matched: np.ndarray         # (T, D) bool
    ignored: np.ndarray         # (T, D) bool
    num_gt: int                 # non-ignored ground truths


def _match_image(
    gts: Sequence[KeypointAnnotation],
    dts: Sequence[KeypointResult],
    area_rng: tuple[float, float],
    spec: SkeletonSpec,
    max_dets: int,
) -> _ImageMatches:
    order = sorted(range(len(dts)), key=lambda i: -dts[i].score)[:max_dets]
    dts = [dts[i] for i in order]
    lo, hi = area_rng
    g_area = np.array([g.effective_area() for g in gts])
    g_ignore = np.array(
        [bool(g.iscrowd) or g.num_keypoints == 0 or not (lo <= a < hi) for g, a in zip(gts, g_area)],
        dtype=bool,
    )
    g_crowd = np.array([bool(g.iscrowd) for g in gts], dtype=bool)
    # Non-ignored ground truths are preferred when matching.
    g_order = np.argsort(g_ignore, kind="stable")
    g_ignore, g_crowd = g_ignore[g_order], g_crowd[g_order]
    T, D, G = len(OKS_THRESHOLDS), len(dts), len(gts)
    matched = np.zeros((T, D), dtype=bool)
    ignored = np.zeros((T, D), dtype=bool)
    if D and G:
        g_kps = np.stack([gts[i].keypoints for i in g_order])
        ious = oks_matrix(
            np.stack([d.keypoints[:, :2] for d in dts]),
            g_kps[:, :, :2],
            g_kps[:, :, 2] > 0,
            np.maximum(g_area[g_order], np.spacing(1)),
            spec.kappa_array,
        )
        for t, thr in enumerate(OKS_THRESHOLDS):
            gt_taken = np.zeros(G, dtype=bool)
            for d in range(D):
                best, m = min(thr, 1 - 1e-10), -1
                for g in range(G):
                    if gt_taken[g] and not g_crowd[g]:
                        continue
                    if m > -1 and not g_ignore[m] and g_ignore[g]:
                        break
                    if ious[d, g] < best:
                        continue
                    best, m = ious[d, g], g
                if m == -1:
                    continue
                matched[t, d] = True
                ignored[t, d] = g_ignore[m]
                gt_taken[m] = True
    if D:
        kp = np.stack([d.keypoints[:, :2] for d in dts])
        span = kp.max(axis=1) - kp.min(axis=1)
        d_area = span[:, 0] * span[:, 1]
        out_of_range = (d_area < lo) | (d_area >= hi)
        ignored |= ~matched & out_of_range[None, :]
    return _ImageMatches(
        scores=np.array([d.score for d in dts]),
        matched=matched,
        ignored=ignored,
        num_gt=int(np.count_nonzero(~g_ignore)),
    )


def _accumulate(per_image: Sequence[_ImageMatches]) -> tuple[np.ndarray, np.ndarray]:
    """Precision (T, R) and recall (T,) arrays, -1 where no ground truth exists."""
    T = len(OKS_THRESHOLDS)
    precision = -np.ones((T, len(RECALL_POINTS)))
    recall = -np.ones(T)
    npig = sum(m.num_gt for m in per_image)
    if npig == 0:
        return precision, recall
    scores = np.concatenate([m.scores for m in per_image]) if per_image else np.zeros(0)
    order = np.argsort(-scores, kind="mergesort")
    matched = np.concatenate([m.matched for m in per_image], axis=1)[:, order]
    ignored = np.concatenate([m.ignored for m in per_image], axis=1)[:, order]
    tps = np.cumsum(matched & ~ignored, axis=1).astype(float)
    fps = np.cumsum(~matched & ~ignored, axis=1).astype(float)
    for t in range(T):
        tp, fp = tps[t], fps[t]
        if tp.size == 0:
            recall[t] = 0.0
            precision[t] = 0.0
            continue
        rc = tp / npig
        denom = tp + fp
        pr = np.divide(tp, denom, out=np.zeros_like(tp), where=denom > 0)
        recall[t] = rc[-1]
        pr = np.maximum.accumulate(pr[::-1])[::-1]
        idx = np.searchsorted(rc, RECALL_POINTS, side="left")
        q = np.zeros(len(RECALL_POINTS))
        valid = idx < len(pr)
        q[valid] = pr[idx[valid]]
        precision[t] = q
    return precision, recall


def _mean_valid(values: np.ndarray) -> float:
    v = values[values > -1]
    return float(np.mean(v)) if v.size else -1.0


def evaluate(
    gt: GtDataset,
    res: ResultSet,
    spec: SkeletonSpec,
    max_dets: int = MAX_DETECTIONS,
) -> EvalResult:
    image_ids = sorted(img.id for img in gt.images)
    known = set(image_ids)
    gts_by_img: dict[int, list[KeypointAnnotation]] = defaultdict(list)
    dts_by_img: dict[int, list[KeypointResult]] = defaultdict(list)
    for ann in gt.annotations:
        if ann.image_id not in known:
            raise UnknownImageId(f"annotation {ann.id} references unknown image {ann.image_id}")
        gts_by_img[ann.image_id].append(ann)
    for r in res.results:
        if r.image_id not in known:
            raise UnknownImageId(f"result references unknown image {r.image_id}")
        dts_by_img[r.image_id].append(r)

    summaries = {}
    for name, rng in AREA_RANGES.items():
        per_image = [_match_image(gts_by_img[i], dts_by_img[i], rng, spec, max_dets) for i in image_ids]
        summaries[name] = _accumulate(per_image)

    prec_all, rec_all = summaries["all"]
    t50 = int(np.flatnonzero(OKS_THRESHOLDS == 0.5)[0])
    t75 = int(np.flatnonzero(OKS_THRESHOLDS == 0.75)[0])
    return EvalResult(
        ap=_mean_valid(prec_all),
        ap50=_mean_valid(prec_all[t50]),
        ap75=_mean_valid(prec_all[t75]),
        ap_medium=_mean_valid(summaries["medium"][0]),
        ap_large=_mean_valid(summaries["large"][0]),
        ar=_mean_valid(rec_all),
    )
