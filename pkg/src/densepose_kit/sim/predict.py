"""Parametric dense predictions for a synthetic scene.

A stand-in for a trained network: every grid location on every level emits a
pose hypothesis whose first-stage error grows with the location's distance
from the assigned person's centre, whose refinement removes a fixed fraction
of that error when the initial pose is good enough, and whose scores are
correlated with the true pose quality to a configurable degree.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..assign import AssignerConfig, assign_grid, level_for_side
from ..core import LEVELS, Detection, GridLocation, Pose, PoseHypothesis, SkeletonSpec, grid_centers, grid_shape
from ..errors import InvalidConfig
from ..oks import instance_scale, paired_oks
from ..postprocess import SCORE_MODES
from .scene import PERSON_TEMPLATE, SimScene, scene_rng


@dataclass(frozen=True)
class NoiseModel:
    """Error and score model of the simulated predictor.

    Keypoint noise std in pixels is ``base_sigma + center_slope * d`` where
    ``d`` is the pixel distance from the location to the person's box
    centre, i.e. the relative error grows linearly with the distance
    measured in units of the person's size. Scores live in logit space:
    ``cls_noise`` is the std of the classification perturbation and
    ``score_corr`` mixes the true pose quality into it.
    """

    base_sigma: float = 1.0
    center_slope: float = 0.25
    refine_gain: float = 0.6
    refine_gate: float = 0.2
    refine_noise: float = 1.0
    cls_noise: float = 1.0
    score_corr: float = 0.2
    pose_noise: float = 0.08
    fg_logit: float = 1.5
    bg_logit: float = -5.0

    def __post_init__(self):
        for name in ("base_sigma", "center_slope", "refine_gain", "refine_gate",
                     "refine_noise", "cls_noise", "score_corr", "pose_noise"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"noise parameter {name} must be non-negative")
        if self.refine_gain > 1 or self.refine_gate > 1 or self.score_corr > 1:
            raise InvalidConfig("refine_gain, refine_gate and score_corr must be <= 1")

    @classmethod
    def noiseless(cls) -> "NoiseModel":
        return cls(base_sigma=0.0, center_slope=0.0, refine_gain=1.0, refine_noise=0.0,
                   cls_noise=0.0, score_corr=0.0, pose_noise=0.0)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class SceneLayout:
    """Every grid location of a scene with its assignment, flattened over levels."""

    level: np.ndarray
    ix: np.ndarray
    iy: np.ndarray
    index: np.ndarray       # row-major index within the level
    centers: np.ndarray     # (N, 2)
    owner: np.ndarray       # position in scene.instances, -1 for background
    in_shrunk: np.ndarray   # initial positive under the shrunk-box rule
    gt: np.ndarray          # (N, K, 2) owner keypoints, zeros for background
    labeled: np.ndarray     # (N, K)
    s2: np.ndarray          # (N,) OKS scale of the owner, 1 for background
    box_center: np.ndarray  # (N, 2)

    @property
    def foreground(self) -> np.ndarray:
        return self.owner >= 0

    @property
    def stride(self) -> np.ndarray:
        return 2.0 ** self.level


def scene_layout(scene: SimScene, assigner: AssignerConfig, k: int = 17) -> SceneLayout:
    insts = scene.instances
    lv = [level_for_side(i.pseudo_box.max_side, assigner) for i in insts]
    parts = []
    for level in LEVELS:
        centers = grid_centers(level, scene.image_w, scene.image_h)
        rows, cols = grid_shape(level, scene.image_w, scene.image_h)
        members = [n for n, l in enumerate(lv) if l == level]
        boxes = np.array([insts[n].pseudo_box.as_tuple() for n in members]).reshape(-1, 4)
        areas = np.array([insts[n].pseudo_box.area for n in members])
        ids = np.array([insts[n].id for n in members])
        local = assign_grid(centers, boxes, areas, ids)
        owner = np.where(local >= 0, np.array(members + [-1])[local], -1)
        idx = np.arange(len(centers))
        parts.append((np.full(len(centers), level), idx % cols, idx // cols, idx, centers, owner))
    level, ix, iy, index, centers, owner = (np.concatenate(p) for p in zip(*parts))
    n = len(owner)
    gt = np.zeros((n, k, 2))
    labeled = np.zeros((n, k), dtype=bool)
    s2 = np.ones(n)
    box_center = np.zeros((n, 2))
    in_shrunk = np.zeros(n, dtype=bool)
    for m, inst in enumerate(insts):
        rows = owner == m
        gt[rows] = inst.pose.keypoints
        labeled[rows] = inst.pose.labeled
        s2[rows] = instance_scale(inst, assigner.use_area).s_squared
        box_center[rows] = inst.pseudo_box.center
        half = 0.5 * np.array([assigner.shrunk_side(l) for l in level[rows]])
        d = np.abs(centers[rows] - np.array(inst.pseudo_box.center))
        in_shrunk[rows] = (d[:, 0] <= half) & (d[:, 1] <= half)
    return SceneLayout(level, ix, iy, index, centers, owner, in_shrunk, gt, labeled, s2, box_center)


@dataclass(eq=False)
class DenseHypotheses:
    layout: SceneLayout
    offsets1: np.ndarray    # (N, K, 2) pixels
    offsets2: np.ndarray    # (N, K, 2) pixels
    cls_score: np.ndarray
    pose_score: np.ndarray
    quality: np.ndarray     # OKS of the refined pose against its owner, 0 for background

    @property
    def initial(self) -> np.ndarray:
        return self.layout.centers[:, None, :] + self.offsets1

    @property
    def refined(self) -> np.ndarray:
        return self.initial + self.offsets2

    def confidence(self, score_mode: str) -> np.ndarray:
        if score_mode == "fused":
            return self.cls_score * self.pose_score
        if score_mode == "cls":
            return self.cls_score.copy()
        if score_mode == "gt-oks":
            return self.quality.copy()
        raise InvalidConfig(f"score mode must be one of {SCORE_MODES}")

    def detections(self, score_mode: str = "fused", min_confidence: float = 0.0) -> list[Detection]:
        conf = self.confidence(score_mode)
        refined = self.refined
        lay = self.layout
        keep = np.flatnonzero(conf >= min_confidence)
        return [
            Detection(Pose(refined[n]), float(conf[n]), int(lay.level[n]), int(lay.index[n]))
            for n in keep
        ]

    def to_hypotheses(self) -> dict[int, list[PoseHypothesis]]:
        out: dict[int, list[PoseHypothesis]] = {level: [] for level in LEVELS}
        lay = self.layout
        for n in range(len(lay.level)):
            loc = GridLocation(int(lay.level[n]), int(lay.ix[n]), int(lay.iy[n]))
            out[loc.level].append(PoseHypothesis(
                loc, self.offsets1[n], self.offsets2[n], float(self.cls_score[n]), float(self.pose_score[n])))
        return out


def _logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-3, 1 - 1e-3)
    return np.log(p / (1 - p))


def sample_scores(
    foreground: np.ndarray,
    quality: np.ndarray,
    noise: NoiseModel,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Classification and pose scores for hypotheses of known quality.

    The classification logit of a foreground hypothesis is
    ``fg_logit + cls_noise * (rho * z_q + sqrt(1 - rho^2) * e)`` where
    ``z_q`` is the quality on a probit-like scale; background uses
    ``bg_logit`` with independent noise. The pose score is the quality plus
    Gaussian noise, clipped to [0, 1].
    """
    n = len(quality)
    e_cls, e_pose = rng.standard_normal(n), rng.standard_normal(n)
    rho = noise.score_corr
    z_q = _logit(quality) / 1.702
    mix = rho * z_q + math.sqrt(1.0 - rho**2) * e_cls
    logit = np.where(foreground, noise.fg_logit + noise.cls_noise * mix,
                     noise.bg_logit + noise.cls_noise * e_cls)
    cls = 1.0 / (1.0 + np.exp(-logit))
    pose = np.clip(quality + noise.pose_noise * e_pose, 0.0, 1.0)
    return cls, pose


def background_poses(layout: SceneLayout, rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Implausible poses for locations that belong to nobody: a template of random size and tilt."""
    n = len(rows)
    tmpl = PERSON_TEMPLATE - PERSON_TEMPLATE.mean(axis=0)
    size = layout.stride[rows] * rng.uniform(2.0, 8.0, n)
    theta = rng.uniform(-math.pi, math.pi, n)
    c, s = np.cos(theta), np.sin(theta)
    x = tmpl[None, :, 0] * c[:, None] - tmpl[None, :, 1] * s[:, None]
    y = tmpl[None, :, 0] * s[:, None] + tmpl[None, :, 1] * c[:, None]
    return np.stack([x, y], axis=-1) * size[:, None, None] + rng.normal(0, 0.05, (n, tmpl.shape[0], 2)) * size[:, None, None]


def simulate_dense(
    scene: SimScene,
    noise: NoiseModel,
    seed,
    spec: SkeletonSpec | None = None,
    assigner: AssignerConfig = AssignerConfig(),
) -> DenseHypotheses:
    spec = spec or SkeletonSpec.coco()
    rng = scene_rng(*(seed if isinstance(seed, (tuple, list)) else (seed,)))
    lay = scene_layout(scene, assigner, spec.k)
    kappas = spec.kappa_array
    n, k = len(lay.level), spec.k
    fg = lay.foreground

    eps1 = rng.standard_normal((n, k, 2))
    eps2 = rng.standard_normal((n, k, 2))
    dist = np.linalg.norm(lay.centers - lay.box_center, axis=1)
    sigma = noise.base_sigma + noise.center_slope * dist
    true_off = lay.gt - lay.centers[:, None, :]
    offsets1 = true_off + sigma[:, None, None] * eps1
    bg_rows = np.flatnonzero(~fg)
    offsets1[bg_rows] = background_poses(lay, bg_rows, rng)

    initial = lay.centers[:, None, :] + offsets1
    oks_init = paired_oks(initial, lay.gt, lay.labeled, lay.s2, kappas)
    gate = fg & (oks_init >= noise.refine_gate)
    offsets2 = np.where(gate[:, None, None], noise.refine_gain * (lay.gt - initial), noise.refine_noise * eps2)

    refined = initial + offsets2
    quality = np.where(fg, paired_oks(refined, lay.gt, lay.labeled, lay.s2, kappas), 0.0)
    cls, pose = sample_scores(fg, quality, noise, rng)
    return DenseHypotheses(lay, offsets1, offsets2, cls, pose, quality)


def simulate_predictions(
    scene: SimScene,
    noise: NoiseModel,
    seed,
    spec: SkeletonSpec | None = None,
    assigner: AssignerConfig = AssignerConfig(),
) -> dict[int, list[PoseHypothesis]]:
    """Per-level lists of hypotheses (row-major) for all five pyramid levels."""
    return simulate_dense(scene, noise, seed, spec, assigner).to_hypotheses()
