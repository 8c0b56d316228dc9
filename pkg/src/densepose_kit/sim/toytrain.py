"""A trainable stand-in for the two regression stages.

The "network" perceives each keypoint through a noisy feature. First-stage
features are the true normalised offsets plus noise whose size follows the
:class:`NoiseModel` distance law, so locations far from a person's centre
see their keypoints poorly. Second-stage features are read at the initially
predicted keypoints: they reveal the remaining residual only when it is
within a receptive radius, otherwise they are mostly noise.

Both stages are per-level linear maps fitted by least-absolute-deviation
subgradient descent on the positives a :class:`StrategyConfig` selects.
Noisy positives attenuate the fitted gains, which is how the choice of
positives shows up in held-out AP.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..assign import POSITIVE_RULES, AssignerConfig
from ..core import LEVELS, SkeletonSpec
from ..errors import InvalidConfig, NoPositives
from ..oks import paired_oks
from ..postprocess import SCORE_MODES
from .predict import DenseHypotheses, NoiseModel, SceneLayout, background_poses, sample_scores, scene_layout
from .scene import SimScene, scene_rng

REFINE_RULES = ("none", "all-assigned", "oks-threshold")


@dataclass(frozen=True)
class StrategyConfig:
    positive_rule: str = "shrunk-box"
    refine_rule: str = "oks-threshold"
    refine_threshold: float = 0.5
    score_mode: str = "fused"
    name: str = ""

    def __post_init__(self):
        if self.positive_rule not in POSITIVE_RULES:
            raise InvalidConfig(f"positive_rule must be one of {POSITIVE_RULES}")
        if self.refine_rule not in REFINE_RULES:
            raise InvalidConfig(f"refine_rule must be one of {REFINE_RULES}")
        if not 0.0 <= self.refine_threshold <= 1.0:
            raise InvalidConfig("refine_threshold must be in [0, 1]")
        if self.score_mode not in SCORE_MODES:
            raise InvalidConfig(f"score_mode must be one of {SCORE_MODES}")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        refine = self.refine_rule if self.refine_rule != "oks-threshold" else f"oks>={self.refine_threshold:g}"
        return f"{self.positive_rule}/{refine}/{self.score_mode}"

    def to_dict(self) -> dict:
        return asdict(self)


TABLE1_STRATEGIES = (
    StrategyConfig("full-box", "none", score_mode="cls", name="baseline"),
    StrategyConfig("shrunk-box", "none", score_mode="cls", name="baseline*"),
    StrategyConfig("shrunk-box", "all-assigned", score_mode="cls", name="+refine"),
    StrategyConfig("shrunk-box", "oks-threshold", 0.5, score_mode="cls", name="+refine*"),
    StrategyConfig("shrunk-box", "oks-threshold", 0.5, score_mode="fused", name="+PSM"),
)


@dataclass(frozen=True)
class TrainerConfig:
    iters: int = 300
    step0: float = 0.5
    step_decay: float = 0.98
    refine_rounds: int = 3
    receptive_radius: float = 0.25  # in units of the person scale s
    refine_obs_noise: float = 0.06  # in units of the person scale s
    min_level_samples: int = 20

    def __post_init__(self):
        if self.iters < 1 or self.refine_rounds < 1 or self.min_level_samples < 1:
            raise InvalidConfig("iters, refine_rounds and min_level_samples must be >= 1")
        if self.step0 <= 0 or not 0 < self.step_decay <= 1:
            raise InvalidConfig("need step0 > 0 and step_decay in (0, 1]")
        if self.receptive_radius <= 0 or self.refine_obs_noise < 0:
            raise InvalidConfig("receptive_radius must be positive, refine_obs_noise non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def lad_loss(X: np.ndarray, y: np.ndarray, mask: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Masked mean absolute residual of P independent linear problems.

    Shapes: X (P, n, f), y (P, n), mask (P, n), theta (P, f) -> (P,).
    """
    r = np.einsum("pnf,pf->pn", X, theta) - y
    w = mask.sum(axis=1)
    return (np.abs(r) * mask).sum(axis=1) / np.maximum(w, 1)


def lad_subgradient(X: np.ndarray, y: np.ndarray, mask: np.ndarray, theta: np.ndarray) -> np.ndarray:
    r = np.einsum("pnf,pf->pn", X, theta) - y
    w = np.maximum(mask.sum(axis=1), 1)
    return np.einsum("pnf,pn->pf", X, np.sign(r) * mask) / w[:, None]


def lad_fit(
    X: np.ndarray,
    y: np.ndarray,
    mask: np.ndarray,
    theta0: np.ndarray | None = None,
    iters: int = 300,
    step0: float = 0.5,
    step_decay: float = 0.98,
) -> tuple[np.ndarray, np.ndarray]:
    """Normalised subgradient descent with geometrically shrinking steps.

    Keeps the best iterate of every problem. Returns (theta, loss).
    """
    P, _, f = X.shape
    theta = np.zeros((P, f)) if theta0 is None else np.array(theta0, dtype=float)
    best = theta.copy()
    best_loss = lad_loss(X, y, mask, theta)
    step = step0
    for _ in range(iters):
        g = lad_subgradient(X, y, mask, theta)
        norm = np.linalg.norm(g, axis=1, keepdims=True)
        theta = theta - step * np.divide(g, norm, out=np.zeros_like(g), where=norm > 0)
        loss = lad_loss(X, y, mask, theta)
        better = loss < best_loss
        best[better] = theta[better]
        best_loss = np.where(better, loss, best_loss)
        step *= step_decay
    return best, best_loss


def _problems(features: np.ndarray, extra: Sequence[np.ndarray], target: np.ndarray, labeled: np.ndarray):
    """Lay out one linear problem per (keypoint, coordinate).

    features, target: (n, K, 2); extra: arrays of shape (n, 2) shared by all
    keypoints (per coordinate). Returns X (2K, n, f), y (2K, n), mask (2K, n).
    """
    n, k, _ = features.shape
    cols = [features.transpose(1, 2, 0)]  # (K, 2, n)
    for e in extra:
        cols.append(np.broadcast_to(e.T[None], (k, 2, n)))
    cols.append(np.ones((k, 2, n)))
    X = np.stack(cols, axis=-1).reshape(2 * k, n, len(cols))
    y = target.transpose(1, 2, 0).reshape(2 * k, n)
    mask = np.broadcast_to(labeled.T[:, None, :], (k, 2, n)).reshape(2 * k, n).astype(float)
    return X, y, mask


def _apply(theta: np.ndarray, features: np.ndarray, extra: Sequence[np.ndarray]) -> np.ndarray:
    n, k, _ = features.shape
    X, _, _ = _problems(features, extra, np.zeros_like(features), np.ones((n, k), bool))
    return np.einsum("pnf,pf->pn", X, theta).reshape(k, 2, n).transpose(2, 0, 1)


@dataclass(eq=False)
class _Features:
    """Per-row perception of a scene layout (foreground rows only)."""

    rows: np.ndarray
    scale: np.ndarray   # (n,) sqrt(s^2)
    u: np.ndarray       # (n, 2) location relative to box centre, in s units
    target: np.ndarray  # (n, K, 2) true offsets in s units
    obs1: np.ndarray
    eps2: np.ndarray


def _perceive(lay: SceneLayout, noise: NoiseModel, rng: np.random.Generator) -> _Features:
    rows = np.flatnonzero(lay.foreground)
    scale = np.sqrt(lay.s2[rows])
    centers = lay.centers[rows]
    u = (centers - lay.box_center[rows]) / scale[:, None]
    target = (lay.gt[rows] - centers[:, None, :]) / scale[:, None, None]
    dist = np.linalg.norm(centers - lay.box_center[rows], axis=1)
    sigma = (noise.base_sigma + noise.center_slope * dist) / scale
    k = lay.gt.shape[1]
    obs1 = target + sigma[:, None, None] * rng.standard_normal((len(rows), k, 2))
    eps2 = rng.standard_normal((len(rows), k, 2))
    return _Features(rows, scale, u, target, obs1, eps2)


def _refine_obs(resid: np.ndarray, eps2: np.ndarray, cfg: TrainerConfig) -> np.ndarray:
    d2 = np.sum(resid**2, axis=-1, keepdims=True)
    reach = np.exp(-d2 / (2.0 * cfg.receptive_radius**2))
    return reach * resid + cfg.refine_obs_noise * eps2


@dataclass(eq=False)
class ToyPredictor:
    strategy: StrategyConfig
    noise: NoiseModel
    trainer: TrainerConfig
    assigner: AssignerConfig
    stage1: dict[int, np.ndarray]
    stage2: dict[int, np.ndarray] | None = None
    train_loss1: float = float("nan")
    train_loss2: float = float("nan")
    n_positives1: int = 0
    n_positives2: int = 0
    spec: SkeletonSpec = field(default_factory=SkeletonSpec.coco)

    def _stage1(self, levels: np.ndarray, feats: _Features) -> np.ndarray:
        out = np.zeros_like(feats.obs1)
        for level in LEVELS:
            sel = levels == level
            if sel.any():
                out[sel] = _apply(self.stage1[level], feats.obs1[sel], [feats.u[sel]])
        return out

    def _stage2(self, levels: np.ndarray, obs2: np.ndarray) -> np.ndarray:
        out = np.zeros_like(obs2)
        if self.stage2 is None:
            return out
        for level in LEVELS:
            sel = levels == level
            if sel.any():
                out[sel] = _apply(self.stage2[level], obs2[sel], [])
        return out

    def predict(self, scene: SimScene, seed) -> DenseHypotheses:
        """Dense hypotheses for ``scene``; feature noise and scores drawn from ``seed``."""
        rng = scene_rng(*(seed if isinstance(seed, (tuple, list)) else (seed,)))
        lay = scene_layout(scene, self.assigner, self.spec.k)
        feats = _perceive(lay, self.noise, rng)
        n, k = len(lay.level), self.spec.k
        rows = feats.rows
        levels = lay.level[rows]
        pred1 = self._stage1(levels, feats)
        pred2 = self._stage2(levels, _refine_obs(feats.target - pred1, feats.eps2, self.trainer))

        offsets1 = np.zeros((n, k, 2))
        offsets2 = self.noise.refine_noise * rng.standard_normal((n, k, 2))
        bg = np.flatnonzero(~lay.foreground)
        offsets1[bg] = background_poses(lay, bg, rng)
        offsets1[rows] = pred1 * feats.scale[:, None, None]
        offsets2[rows] = pred2 * feats.scale[:, None, None]

        final = lay.centers[:, None, :] + offsets1 + offsets2
        quality = np.where(lay.foreground, paired_oks(final, lay.gt, lay.labeled, lay.s2, self.spec.kappa_array), 0.0)
        fires = lay.in_shrunk if self.strategy.positive_rule == "shrunk-box" else lay.foreground.copy()
        fires &= lay.foreground
        cls, pose = sample_scores(fires, quality, self.noise, rng)
        return DenseHypotheses(lay, offsets1, offsets2, cls, pose, quality)


def _fit_levels(levels, features, extra, target, labeled, cfg: TrainerConfig):
    """Pooled fit, then per-level refits warm-started from it."""
    X, y, mask = _problems(features, extra, target, labeled)
    pooled, pooled_loss = lad_fit(X, y, mask, None, cfg.iters, cfg.step0, cfg.step_decay)
    params, losses, weights = {}, [], []
    for level in LEVELS:
        sel = levels == level
        if sel.sum() < cfg.min_level_samples:
            params[level] = pooled
            if sel.any():
                losses.append(lad_loss(X[:, sel], y[:, sel], mask[:, sel], pooled).mean())
                weights.append(sel.sum())
            continue
        theta, loss = lad_fit(X[:, sel], y[:, sel], mask[:, sel], pooled, cfg.iters, 0.25 * cfg.step0, cfg.step_decay)
        params[level] = theta
        losses.append(loss.mean())
        weights.append(sel.sum())
    return params, float(np.average(losses, weights=weights)) if weights else float("nan")


def toy_train(
    scenes: Sequence[SimScene],
    strategy: StrategyConfig,
    trainer: TrainerConfig = TrainerConfig(),
    noise: NoiseModel = NoiseModel(),
    seed=0,
    spec: SkeletonSpec | None = None,
    assigner: AssignerConfig = AssignerConfig(),
) -> ToyPredictor:
    """Fit both regression stages on the positives ``strategy`` selects.

    Raises:
        NoPositives: when a stage's positive set is empty. If the refinement
            stage is the empty one, the exception carries the fitted
            first-stage model.
    """
    spec = spec or SkeletonSpec.coco()
    if not scenes:
        raise InvalidConfig("toy_train needs at least one scene")
    kappas = spec.kappa_array
    key = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
    parts = []
    for i, scene in enumerate(scenes):
        lay = scene_layout(scene, assigner, spec.k)
        f = _perceive(lay, noise, scene_rng(*key, i))
        parts.append((lay.level[f.rows], lay.in_shrunk[f.rows], lay.labeled[f.rows], lay.s2[f.rows], f))
    levels = np.concatenate([p[0] for p in parts])
    shrunk = np.concatenate([p[1] for p in parts])
    labeled = np.concatenate([p[2] for p in parts])
    s2 = np.concatenate([p[3] for p in parts])
    feats = _Features(
        rows=np.arange(len(levels)),
        scale=np.concatenate([p[4].scale for p in parts]),
        u=np.concatenate([p[4].u for p in parts]).reshape(-1, 2),
        target=np.concatenate([p[4].target for p in parts]).reshape(-1, spec.k, 2),
        obs1=np.concatenate([p[4].obs1 for p in parts]).reshape(-1, spec.k, 2),
        eps2=np.concatenate([p[4].eps2 for p in parts]).reshape(-1, spec.k, 2),
    )

    pos1 = shrunk if strategy.positive_rule == "shrunk-box" else np.ones(len(levels), bool)
    if not pos1.any():
        raise NoPositives("the positive rule selected no training locations")
    stage1, loss1 = _fit_levels(levels[pos1], feats.obs1[pos1], [feats.u[pos1]], feats.target[pos1],
                                labeled[pos1], trainer)
    model = ToyPredictor(strategy, noise, trainer, assigner, stage1, None, loss1,
                         n_positives1=int(pos1.sum()), spec=spec)
    if strategy.refine_rule == "none":
        return model

    pred1 = model._stage1(levels, feats)
    resid = feats.target - pred1
    obs2 = _refine_obs(resid, feats.eps2, trainer)
    # Normalised coordinates make s^2 = 1 for the training-time OKS.
    ones = np.ones(len(levels))
    norm_s2 = s2 / feats.scale**2 * ones
    rounds = 1 if strategy.refine_rule == "all-assigned" else trainer.refine_rounds
    threshold = 0.0 if strategy.refine_rule == "all-assigned" else strategy.refine_threshold
    stage2 = {level: np.zeros((2 * spec.k, 2)) for level in LEVELS}
    model.stage2 = stage2
    for r in range(rounds):
        refined = pred1 + model._stage2(levels, obs2)
        oks = paired_oks(refined, feats.target, labeled, norm_s2, kappas)
        pos2 = oks >= threshold
        if not pos2.any():
            if r == 0:
                model.stage2 = None
                raise NoPositives(f"no hypothesis reaches refinement OKS {threshold}", model)
            break
        stage2, loss2 = _fit_levels(levels[pos2], obs2[pos2], [], resid[pos2], labeled[pos2], trainer)
        model.stage2, model.train_loss2, model.n_positives2 = stage2, loss2, int(pos2.sum())
    return model
