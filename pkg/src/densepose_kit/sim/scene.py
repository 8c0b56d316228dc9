"""Seeded synthetic scenes of posed people."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..assign import AssignerConfig, assign_grid, level_for_side
from ..core import GroundTruthInstance, Pose, SkeletonSpec, grid_centers
from ..errors import InvalidConfig
from ..oks import BOX_AREA_FACTOR, oks_matrix

# Upright person facing the camera; x right, y down, unit = body height.
PERSON_TEMPLATE = np.array([
    (0.000, 0.060), (0.020, 0.045), (-0.020, 0.045), (0.045, 0.055), (-0.045, 0.055),
    (0.110, 0.190), (-0.110, 0.190), (0.150, 0.340), (-0.150, 0.340),
    (0.160, 0.470), (-0.160, 0.470), (0.080, 0.520), (-0.080, 0.520),
    (0.090, 0.730), (-0.090, 0.730), (0.090, 0.950), (-0.090, 0.950),
])


@dataclass(frozen=True)
class SceneConfig:
    image_w: int = 512
    image_h: int = 512
    count_min: int = 1
    count_max: int = 4
    scale_min: float = 48.0   # body height in pixels
    scale_max: float = 320.0
    jitter: float = 0.03      # per-keypoint std, fraction of body height
    max_rotation_deg: float = 20.0
    width_range: tuple[float, float] = (0.8, 1.4)
    p_labeled: float = 0.85
    p_visible: float = 0.8
    # Instances whose full poses overlap beyond this OKS are re-placed, so that
    # exact detections of different people never suppress each other.
    max_pair_oks: float = 0.25
    max_tries: int = 50

    def __post_init__(self):
        object.__setattr__(self, "width_range", tuple(float(x) for x in self.width_range))
        if self.image_w < 1 or self.image_h < 1:
            raise InvalidConfig("image dimensions must be >= 1")
        if not 0 <= self.count_min <= self.count_max:
            raise InvalidConfig("need 0 <= count_min <= count_max")
        if not 0 < self.scale_min <= self.scale_max:
            raise InvalidConfig("need 0 < scale_min <= scale_max")
        if self.scale_max > min(self.image_w, self.image_h):
            raise InvalidConfig("scale_max must fit inside the image")
        if not 0 < self.p_labeled <= 1 or not 0 <= self.p_visible <= 1:
            raise InvalidConfig("label/visibility probabilities must be in (0, 1]")
        lo, hi = self.width_range
        if not 0 < lo <= hi:
            raise InvalidConfig("width_range must be positive and ordered")
        if self.jitter < 0 or self.max_tries < 1:
            raise InvalidConfig("jitter must be >= 0 and max_tries >= 1")


@dataclass(eq=False)
class SimScene:
    image_w: int
    image_h: int
    instances: list[GroundTruthInstance] = field(default_factory=list)
    heights: list[float] = field(default_factory=list)


def scene_rng(*key: int) -> np.random.Generator:
    """Independent generator for a (master seed, stream, index, ...) key."""
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def _sample_pose(rng: np.random.Generator, cfg: SceneConfig) -> tuple[np.ndarray, float]:
    height = math.exp(rng.uniform(math.log(cfg.scale_min), math.log(cfg.scale_max)))
    pts = PERSON_TEMPLATE.copy()
    pts[:, 0] *= rng.uniform(*cfg.width_range)
    pts += rng.normal(0.0, cfg.jitter, pts.shape)
    theta = math.radians(rng.uniform(-cfg.max_rotation_deg, cfg.max_rotation_deg))
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    pts = (pts - pts.mean(axis=0)) @ rot.T
    return pts * height, height


def _visibility(rng: np.random.Generator, k: int, cfg: SceneConfig) -> np.ndarray:
    labeled = rng.random(k) < cfg.p_labeled
    if not labeled.any():
        labeled[rng.integers(k)] = True
    return np.where(labeled, np.where(rng.random(k) < cfg.p_visible, 2, 1), 0)


def _owns_positive(inst: GroundTruthInstance, others: list[GroundTruthInstance],
                   cfg: SceneConfig, acfg: AssignerConfig) -> bool:
    """True when some location on the instance's level is an initial positive for it."""
    level = level_for_side(inst.pseudo_box.max_side, acfg)
    peers = [o for o in others if level_for_side(o.pseudo_box.max_side, acfg) == level] + [inst]
    centers = grid_centers(level, cfg.image_w, cfg.image_h)
    boxes = np.array([p.pseudo_box.as_tuple() for p in peers])
    areas = np.array([p.pseudo_box.area for p in peers])
    owner = assign_grid(centers, boxes, areas, np.array([p.id for p in peers]))
    mine = centers[owner == len(peers) - 1]
    if len(mine) == 0:
        return False
    cx, cy = inst.pseudo_box.center
    half = 0.5 * acfg.shrunk_side(level)
    return bool(np.any((np.abs(mine[:, 0] - cx) <= half) & (np.abs(mine[:, 1] - cy) <= half)))


def _pair_oks(a: np.ndarray, b: np.ndarray, kappas: np.ndarray) -> float:
    """Larger of the two directed NMS similarities between full poses."""
    def s2(p):
        span = p.max(axis=0) - p.min(axis=0)
        return max(span[0] * span[1] * BOX_AREA_FACTOR, np.spacing(1))
    k = len(a)
    ab = oks_matrix(a[None], b[None], np.ones((1, k), bool), np.array([s2(b)]), kappas)[0, 0]
    ba = oks_matrix(b[None], a[None], np.ones((1, k), bool), np.array([s2(a)]), kappas)[0, 0]
    return float(max(ab, ba))


def generate_scene(
    seed,
    config: SceneConfig = SceneConfig(),
    spec: SkeletonSpec | None = None,
    assigner: AssignerConfig = AssignerConfig(),
) -> SimScene:
    """Deterministic scene for ``seed`` (an int or a tuple of ints).

    Every placed instance lies inside the image, owns at least one
    initial-positive location under the shrunk-box rule, and overlaps every
    other instance by less than ``config.max_pair_oks``. Candidates that
    cannot be placed within ``max_tries`` attempts are dropped.
    """
    spec = spec or SkeletonSpec.coco()
    if spec.k != len(PERSON_TEMPLATE):
        raise InvalidConfig("the scene generator ships a 17-keypoint person template only")
    key = seed if isinstance(seed, (tuple, list)) else (seed,)
    rng = scene_rng(*key)
    count = int(rng.integers(config.count_min, config.count_max + 1))
    scene = SimScene(config.image_w, config.image_h)
    kappas = spec.kappa_array
    for n in range(count):
        for _ in range(config.max_tries):
            rel, height = _sample_pose(rng, config)
            lo, hi = rel.min(axis=0), rel.max(axis=0)
            if np.any(hi - lo >= [config.image_w, config.image_h]):
                continue
            offset = np.array([rng.uniform(-lo[0], config.image_w - hi[0]),
                               rng.uniform(-lo[1], config.image_h - hi[1])])
            pts = rel + offset
            vis = _visibility(rng, spec.k, config)
            span = pts.max(axis=0) - pts.min(axis=0)
            inst = GroundTruthInstance(Pose(pts, vis), area=float(span[0] * span[1] * BOX_AREA_FACTOR), id=n)
            if any(_pair_oks(pts, o.pose.keypoints, kappas) >= config.max_pair_oks for o in scene.instances):
                continue
            others = scene.instances
            if not _owns_positive(inst, others, config, assigner):
                continue
            if not all(_owns_positive(o, [p for p in others if p is not o] + [inst], config, assigner)
                       for o in others):
                continue
            scene.instances.append(inst)
            scene.heights.append(height)
            break
    return scene


def scene_config_dict(cfg: SceneConfig) -> dict:
    d = asdict(cfg)
    d["width_range"] = list(cfg.width_range)
    return d
