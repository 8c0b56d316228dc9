"""Training-target assignment.

Instances go to one pyramid level by the longest side of their pseudo-box.
Each grid location on that level belongs to the smallest containing box.
Initial-regression positives sit inside a fixed-size square around the box
centre; refinement positives are assigned hypotheses whose refined pose
reaches an OKS threshold; pose-score targets are the refined OKS itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import (
    LEVELS,
    GridLocation,
    GroundTruthInstance,
    PoseHypothesis,
    SkeletonSpec,
    decode_refined,
    grid_locations,
)
from .errors import InvalidConfig
from .oks import compute_oks, instance_scale

POSITIVE_RULES = ("shrunk-box", "full-box")


@dataclass(frozen=True)
class AssignerConfig:
    shrunk_sides: tuple[float, ...] = tuple(1.5 * s for s in (8, 16, 32, 64, 128))
    # Edges of the half-open max-side ranges for levels 3..7.
    level_bounds: tuple[float, ...] = (0.0, 64.0, 128.0, 256.0, 512.0, math.inf)
    refine_oks_threshold: float = 0.5
    positive_rule: str = "shrunk-box"
    use_area: bool = True

    def __post_init__(self):
        object.__setattr__(self, "shrunk_sides", tuple(float(s) for s in self.shrunk_sides))
        object.__setattr__(self, "level_bounds", tuple(float(b) for b in self.level_bounds))
        sides = self.shrunk_sides
        if len(sides) != len(LEVELS) or any(s <= 0 for s in sides):
            raise InvalidConfig("shrunk_sides needs 5 positive values")
        if any(b <= a for a, b in zip(sides, sides[1:])):
            raise InvalidConfig("shrunk_sides must be increasing")
        b = self.level_bounds
        if len(b) != len(LEVELS) + 1 or b[0] != 0.0 or b[-1] != math.inf:
            raise InvalidConfig("level_bounds must be 6 edges from 0 to inf")
        if any(hi <= lo for lo, hi in zip(b, b[1:])):
            raise InvalidConfig("level_bounds must be increasing")
        if not 0.0 <= self.refine_oks_threshold <= 1.0:
            raise InvalidConfig("refine_oks_threshold must be in [0, 1]")
        if self.positive_rule not in POSITIVE_RULES:
            raise InvalidConfig(f"positive_rule must be one of {POSITIVE_RULES}")

    @property
    def level_ranges(self) -> list[tuple[float, float]]:
        return list(zip(self.level_bounds, self.level_bounds[1:]))

    def shrunk_side(self, level: int) -> float:
        return self.shrunk_sides[LEVELS.index(level)]


@dataclass(frozen=True)
class Assignment:
    location: GridLocation
    instance_id: int | None = None
    is_initial_positive: bool = False
    is_refine_positive: bool = False
    psm_target: float | None = None

    def to_dict(self) -> dict:
        loc = self.location
        return {
            "level": loc.level, "ix": loc.ix, "iy": loc.iy, "x_c": loc.x_c, "y_c": loc.y_c,
            "instance_id": self.instance_id,
            "is_initial_positive": self.is_initial_positive,
            "is_refine_positive": self.is_refine_positive,
            "psm_target": self.psm_target,
        }


def level_for_side(max_side: float, cfg: AssignerConfig) -> int:
    for level, (lo, hi) in zip(LEVELS, cfg.level_ranges):
        if lo <= max_side < hi:
            return level
    raise ValueError(f"max side {max_side} outside every level range")


def assign_levels(instances: Sequence[GroundTruthInstance], cfg: AssignerConfig) -> dict[int, list[int]]:
    """Map each pyramid level to the ids of the instances it is responsible for."""
    out: dict[int, list[int]] = {level: [] for level in LEVELS}
    for inst in instances:
        out[level_for_side(inst.pseudo_box.max_side, cfg)].append(inst.id)
    return out


def assign_location_to_instance(loc: GridLocation, instances: Sequence[GroundTruthInstance]) -> int | None:
    """Id of the smallest pseudo-box containing the location centre (lowest id on ties)."""
    best = None
    for inst in instances:
        box = inst.pseudo_box
        if not box.contains(loc.x_c, loc.y_c):
            continue
        key = (box.area, inst.id)
        if best is None or key < best[0]:
            best = (key, inst.id)
    return None if best is None else best[1]


def in_shrunk_region(loc: GridLocation, inst: GroundTruthInstance, cfg: AssignerConfig) -> bool:
    box = inst.pseudo_box
    if not box.contains(loc.x_c, loc.y_c):
        return False
    if cfg.positive_rule == "full-box":
        return True
    half = 0.5 * cfg.shrunk_side(loc.level)
    cx, cy = box.center
    return abs(loc.x_c - cx) <= half and abs(loc.y_c - cy) <= half


def _by_level(instances, cfg):
    levels = assign_levels(instances, cfg)
    by_id = {inst.id: inst for inst in instances}
    return {lvl: [by_id[i] for i in ids] for lvl, ids in levels.items()}


def assign_locations(
    locs: Sequence[GridLocation],
    instances: Sequence[GroundTruthInstance],
    cfg: AssignerConfig,
) -> list[int | None]:
    """Instance id (or None for background) for every location, honouring level assignment."""
    per_level = _by_level(instances, cfg)
    return [assign_location_to_instance(loc, per_level[loc.level]) for loc in locs]


def initial_positives(
    locs: Sequence[GridLocation],
    instances: Sequence[GroundTruthInstance],
    cfg: AssignerConfig,
) -> set[tuple[GridLocation, int]]:
    by_id = {inst.id: inst for inst in instances}
    out = set()
    for loc, inst_id in zip(locs, assign_locations(locs, instances, cfg)):
        if inst_id is not None and in_shrunk_region(loc, by_id[inst_id], cfg):
            out.add((loc, inst_id))
    return out


def refinement_positives(
    hyps: Sequence[PoseHypothesis],
    instance_ids: Sequence[int | None],
    instances: Sequence[GroundTruthInstance],
    cfg: AssignerConfig,
    spec: SkeletonSpec,
) -> set[tuple[GridLocation, int]]:
    """Assigned hypotheses whose refined pose reaches ``cfg.refine_oks_threshold``."""
    by_id = {inst.id: inst for inst in instances}
    out = set()
    for h, inst_id in zip(hyps, instance_ids):
        if inst_id is None:
            continue
        gt = by_id[inst_id]
        oks = compute_oks(decode_refined(h), gt.pose, instance_scale(gt, cfg.use_area), spec)
        if oks >= cfg.refine_oks_threshold:
            out.add((h.location, inst_id))
    return out


def psm_targets(
    hyps: Sequence[PoseHypothesis],
    instance_ids: Sequence[int | None],
    instances: Sequence[GroundTruthInstance],
    spec: SkeletonSpec,
    use_area: bool = True,
) -> np.ndarray:
    """Pose-score targets: refined OKS for assigned hypotheses, 0 for background."""
    by_id = {inst.id: inst for inst in instances}
    out = np.zeros(len(hyps))
    for i, (h, inst_id) in enumerate(zip(hyps, instance_ids)):
        if inst_id is not None:
            gt = by_id[inst_id]
            out[i] = compute_oks(decode_refined(h), gt.pose, instance_scale(gt, use_area), spec)
    return out


@dataclass
class SceneAssignment:
    assignments: list[Assignment] = field(default_factory=list)

    def positives(self, kind: str = "initial") -> list[Assignment]:
        attr = "is_initial_positive" if kind == "initial" else "is_refine_positive"
        return [a for a in self.assignments if getattr(a, attr)]


def assign_scene(
    instances: Sequence[GroundTruthInstance],
    image_w: int,
    image_h: int,
    cfg: AssignerConfig,
    spec: SkeletonSpec,
    hypotheses: Mapping[GridLocation, PoseHypothesis] | None = None,
) -> SceneAssignment:
    """Full per-location assignment over all five levels.

    Refinement flags and pose-score targets need predictions; without
    ``hypotheses`` they are left unset (False / None).
    """
    by_id = {inst.id: inst for inst in instances}
    per_level = _by_level(instances, cfg)
    result = SceneAssignment()
    for level in LEVELS:
        for loc in grid_locations(level, image_w, image_h):
            inst_id = assign_location_to_instance(loc, per_level[level])
            if inst_id is None:
                psm = 0.0 if hypotheses is not None else None
                result.assignments.append(Assignment(loc, None, psm_target=psm))
                continue
            inst = by_id[inst_id]
            refine, psm = False, None
            if hypotheses is not None:
                h = hypotheses[loc]
                psm = compute_oks(decode_refined(h), inst.pose, instance_scale(inst, cfg.use_area), spec)
                refine = psm >= cfg.refine_oks_threshold
            result.assignments.append(
                Assignment(loc, inst_id, in_shrunk_region(loc, inst, cfg), refine, psm)
            )
    return result


def assign_grid(
    centers: np.ndarray,
    boxes: np.ndarray,
    areas: np.ndarray,
    ids: np.ndarray,
) -> np.ndarray:
    """Vectorised smallest-box assignment.

    Args:
        centers: (N, 2) location centres.
        boxes: (M, 4) boxes as x_min, y_min, x_max, y_max.
        areas: (M,) box areas used for the smallest-box rule.
        ids: (M,) instance ids used to break area ties.

    Returns:
        (N,) positional index into ``boxes`` or -1 for background.
    """
    n = len(centers)
    if len(boxes) == 0:
        return np.full(n, -1, dtype=int)
    x, y = centers[:, 0:1], centers[:, 1:2]
    inside = (x >= boxes[:, 0]) & (x <= boxes[:, 2]) & (y >= boxes[:, 1]) & (y <= boxes[:, 3])
    order = np.lexsort((ids, areas))
    rank = np.empty(len(boxes), dtype=int)
    rank[order] = np.arange(len(boxes))
    masked = np.where(inside, rank[None, :], len(boxes))
    best = masked.argmin(axis=1)
    return np.where(inside.any(axis=1), best, -1)
