"""Skeleton configuration, pose records, grid geometry and offset decoding."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidConfig, InvalidLevel, NoLabeledKeypoints, ShapeMismatch, TooFewKeypoints

LEVELS = (3, 4, 5, 6, 7)

COCO_KEYPOINT_NAMES = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)
# Published COCO per-keypoint sigmas; the falloff constant is twice the sigma.
COCO_SIGMAS = (
    0.26, 0.25, 0.25, 0.35, 0.35, 0.79, 0.79, 0.72, 0.72,
    0.62, 0.62, 1.07, 1.07, 0.87, 0.87, 0.89, 0.89,
)
COCO_KAPPAS = tuple(2.0 * s / 10.0 for s in COCO_SIGMAS)
COCO_FLIP_PAIRS = ((1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16))

# Shoulders, elbows, hips, knees; the centre tap of the 3x3 kernel keeps the location itself.
DEFAULT_SAMPLING_KEYPOINTS = (5, 6, 7, 8, 11, 12, 13, 14)
KERNEL_GRID = np.array([(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1)], dtype=float)
KERNEL_CENTER_TAP = 4


def stride_for_level(level: int) -> int:
    if level not in LEVELS:
        raise InvalidLevel(f"pyramid level must be in [3, 7], got {level}")
    return 2 ** level


@dataclass(frozen=True)
class SkeletonSpec:
    k: int
    names: tuple[str, ...]
    kappas: tuple[float, ...]
    flip_pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(str(n) for n in self.names))
        object.__setattr__(self, "kappas", tuple(float(x) for x in self.kappas))
        object.__setattr__(self, "flip_pairs", tuple(tuple(int(i) for i in p) for p in self.flip_pairs))
        if self.k < 1:
            raise InvalidConfig("skeleton needs at least one keypoint")
        if len(self.names) != self.k or len(self.kappas) != self.k:
            raise InvalidConfig(
                f"skeleton declares k={self.k} but has {len(self.names)} names "
                f"and {len(self.kappas)} kappas"
            )
        if not all(x > 0 and math.isfinite(x) for x in self.kappas):
            raise InvalidConfig("all kappas must be positive and finite")
        for pair in self.flip_pairs:
            if len(pair) != 2 or not all(0 <= i < self.k for i in pair):
                raise InvalidConfig(f"bad flip pair {pair}")

    @property
    def kappa_array(self) -> np.ndarray:
        return np.asarray(self.kappas, dtype=float)

    @classmethod
    def coco(cls) -> "SkeletonSpec":
        return cls(17, COCO_KEYPOINT_NAMES, COCO_KAPPAS, COCO_FLIP_PAIRS)

    @classmethod
    def from_dict(cls, data: dict) -> "SkeletonSpec":
        unknown = set(data) - {"k", "names", "kappas", "flip_pairs"}
        if unknown:
            raise InvalidConfig(f"unknown skeleton keys: {sorted(unknown)}")
        try:
            return cls(int(data["k"]), data["names"], data["kappas"], data.get("flip_pairs", ()))
        except KeyError as exc:
            raise InvalidConfig(f"skeleton config missing {exc}") from None

    @classmethod
    def from_json(cls, path: str | Path) -> "SkeletonSpec":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "names": list(self.names),
            "kappas": list(self.kappas),
            "flip_pairs": [list(p) for p in self.flip_pairs],
        }


def _frozen_array(values, shape_tail: tuple[int, ...], dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    if arr.ndim != 1 + len(shape_tail) or arr.shape[1:] != shape_tail:
        raise ShapeMismatch(f"expected shape (K, {', '.join(map(str, shape_tail))}), got {arr.shape}")
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Pose:
    """K keypoints in input-image pixels plus COCO visibility flags.

    Visibility follows COCO: 0 unlabeled, 1 labeled but occluded, 2 visible.
    """

    keypoints: np.ndarray
    visibility: np.ndarray | None = None

    def __post_init__(self):
        kps = _frozen_array(self.keypoints, (2,))
        if not np.all(np.isfinite(kps)):
            raise ValueError("keypoint coordinates must be finite")
        vis = np.full(len(kps), 2) if self.visibility is None else self.visibility
        vis = _frozen_array(vis, (), dtype=np.int64)
        if vis.shape != (len(kps),):
            raise ShapeMismatch("visibility must have one flag per keypoint")
        if np.any((vis < 0) | (vis > 2)):
            raise ValueError("visibility flags must be 0, 1 or 2")
        object.__setattr__(self, "keypoints", kps)
        object.__setattr__(self, "visibility", vis)

    @property
    def k(self) -> int:
        return len(self.keypoints)

    @property
    def labeled(self) -> np.ndarray:
        return self.visibility > 0

    @classmethod
    def from_flat(cls, flat: Sequence[float]) -> "Pose":
        """Build from a COCO ``[x1, y1, v1, x2, ...]`` array."""
        arr = np.asarray(flat, dtype=float).reshape(-1, 3)
        return cls(arr[:, :2], arr[:, 2].astype(np.int64))

    def to_flat(self) -> list[float]:
        out = np.concatenate([self.keypoints, self.visibility[:, None].astype(float)], axis=1)
        return [float(x) for x in out.ravel()]

    def translated(self, dx: float, dy: float) -> "Pose":
        return Pose(self.keypoints + np.array([dx, dy]), self.visibility)


@dataclass(frozen=True)
class PseudoBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"inverted box {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def max_side(self) -> float:
        return max(self.width, self.height)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def pseudo_box(pose: Pose) -> PseudoBox:
    """Tight axis-aligned box over the labeled keypoints of ``pose``."""
    mask = pose.labeled
    if not mask.any():
        raise NoLabeledKeypoints("pose has no labeled keypoints")
    pts = pose.keypoints[mask]
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    return PseudoBox(float(x0), float(y0), float(x1), float(y1))


@dataclass(frozen=True, eq=False)
class GroundTruthInstance:
    pose: Pose
    area: float | None = None
    id: int = 0
    pseudo_box: PseudoBox = field(init=False)

    def __post_init__(self):
        if self.area is not None and not self.area > 0:
            raise ValueError("instance area must be positive when given")
        object.__setattr__(self, "pseudo_box", pseudo_box(self.pose))


@dataclass(frozen=True)
class GridLocation:
    """A cell centre on one pyramid level, in input-image pixels."""

    level: int
    ix: int
    iy: int
    stride: int = field(init=False)
    x_c: float = field(init=False)
    y_c: float = field(init=False)

    def __post_init__(self):
        s = stride_for_level(self.level)
        object.__setattr__(self, "stride", s)
        object.__setattr__(self, "x_c", (self.ix + 0.5) * s)
        object.__setattr__(self, "y_c", (self.iy + 0.5) * s)

    def row_major_index(self, image_w: int) -> int:
        return self.iy * math.ceil(image_w / self.stride) + self.ix


def grid_shape(level: int, image_w: int, image_h: int) -> tuple[int, int]:
    """(rows, cols) of the level's grid."""
    s = stride_for_level(level)
    if image_w < 1 or image_h < 1:
        raise ValueError("image dimensions must be >= 1")
    return math.ceil(image_h / s), math.ceil(image_w / s)


def grid_locations(level: int, image_w: int, image_h: int) -> list[GridLocation]:
    rows, cols = grid_shape(level, image_w, image_h)
    return [GridLocation(level, ix, iy) for iy in range(rows) for ix in range(cols)]


def grid_centers(level: int, image_w: int, image_h: int) -> np.ndarray:
    """Row-major (N, 2) array of cell centres; same order as :func:`grid_locations`."""
    rows, cols = grid_shape(level, image_w, image_h)
    s = stride_for_level(level)
    xs = (np.arange(cols) + 0.5) * s
    ys = (np.arange(rows) + 0.5) * s
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def _pairs(values, k: int | None = None) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or (k is not None and arr.shape[0] != k):
        raise ShapeMismatch(f"expected ({k if k is not None else 'K'}, 2) offsets, got {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class PoseHypothesis:
    """Dense prediction from one grid location: two offset sets plus scores."""

    location: GridLocation
    offsets1: np.ndarray
    offsets2: np.ndarray
    cls_score: float = 0.0
    pose_score: float = 0.0

    def __post_init__(self):
        o1 = _frozen_array(self.offsets1, (2,))
        o2 = _frozen_array(self.offsets2, (2,))
        if o1.shape != o2.shape:
            raise ShapeMismatch("offsets1 and offsets2 must both have K entries")
        for name in ("cls_score", "pose_score"):
            v = float(getattr(self, name))
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "offsets1", o1)
        object.__setattr__(self, "offsets2", o2)

    @property
    def k(self) -> int:
        return len(self.offsets1)


@dataclass(frozen=True, eq=False)
class Detection:
    pose: Pose
    confidence: float
    source_level: int = 3
    index: int = 0

    def __post_init__(self):
        c = float(self.confidence)
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {c}")
        object.__setattr__(self, "confidence", c)


def decode_initial(h: PoseHypothesis) -> Pose:
    """Location plus first-stage offsets."""
    center = np.array([h.location.x_c, h.location.y_c])
    return Pose(center + h.offsets1)


def decode_refined(h: PoseHypothesis) -> Pose:
    """Location plus both offset sets."""
    center = np.array([h.location.x_c, h.location.y_c])
    return Pose(center + h.offsets1 + h.offsets2)


def derive_sampling_offsets(
    offsets1,
    stride: float = 1.0,
    indices: Sequence[int] = DEFAULT_SAMPLING_KEYPOINTS,
) -> np.ndarray:
    """Turn first-stage keypoint offsets into a 3x3 deformable-kernel offset field.

    The centre tap samples the location itself; the other eight taps, in
    raster order, sample the keypoints named by ``indices``. Each returned
    (dx, dy) is the desired sample position minus the tap's default grid
    position, in feature-grid units (pixel offsets divided by ``stride``).

    Returns:
        (9, 2) array in raster tap order.
    """
    off = _pairs(offsets1)
    if len(off) < 9:
        raise TooFewKeypoints(f"need K >= 9 keypoints to fill a 3x3 kernel, got {len(off)}")
    indices = tuple(int(i) for i in indices)
    if len(indices) != 8 or not all(0 <= i < len(off) for i in indices):
        raise InvalidConfig("sampling subset must name 8 valid keypoint indices")
    targets = np.zeros((9, 2))
    outer = [t for t in range(9) if t != KERNEL_CENTER_TAP]
    targets[outer] = off[list(indices)] / stride
    return targets - KERNEL_GRID
