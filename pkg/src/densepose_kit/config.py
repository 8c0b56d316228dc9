"""One JSON file with a section per component, merged with command-line overrides.

Every section is optional and falls back to the component defaults. Unknown
sections or keys are rejected, and each component re-checks its own
invariants when built. ``null`` stands for infinity in ``assigner.level_bounds``.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .assign import AssignerConfig
from .core import SkeletonSpec
from .errors import InvalidConfig, ParseError
from .losses import FocalParams, LossWeights
from .postprocess import NmsConfig
from .sim.experiments import REFINE_SWEEP_THRESHOLDS, AblationConfig
from .sim.pipeline import PipelineConfig
from .sim.predict import NoiseModel
from .sim.scene import SceneConfig
from .sim.toytrain import TABLE1_STRATEGIES, StrategyConfig, TrainerConfig

CONFIG_ENV_VAR = "DENSEPOSE_KIT_CONFIG"


@dataclass(frozen=True)
class AblationSettings:
    n_trials: int = 3
    n_train_scenes: int = 30
    n_test_scenes: int = 20
    strategies: tuple[StrategyConfig, ...] = TABLE1_STRATEGIES
    refine_thresholds: tuple[float, ...] = REFINE_SWEEP_THRESHOLDS

    def __post_init__(self):
        object.__setattr__(self, "refine_thresholds", tuple(float(t) for t in self.refine_thresholds))
        strategies = []
        for s in self.strategies:
            strategies.append(s if isinstance(s, StrategyConfig) else _build(StrategyConfig, s, "ablation.strategies"))
        object.__setattr__(self, "strategies", tuple(strategies))
        if min(self.n_trials, self.n_train_scenes, self.n_test_scenes) < 1:
            raise InvalidConfig("ablation sizes must be >= 1")
        if any(not 0.0 <= t <= 1.0 for t in self.refine_thresholds):
            raise InvalidConfig("refine_thresholds must lie in [0, 1]")


@dataclass(frozen=True)
class SimulateSettings:
    n_scenes: int = 4

    def __post_init__(self):
        if self.n_scenes < 0:
            raise InvalidConfig("simulate.n_scenes must be >= 0")


@dataclass(frozen=True)
class RunConfig:
    skeleton: SkeletonSpec = field(default_factory=SkeletonSpec.coco)
    assigner: AssignerConfig = field(default_factory=AssignerConfig)
    nms: NmsConfig = field(default_factory=NmsConfig)
    loss_weights: LossWeights = field(default_factory=LossWeights)
    focal: FocalParams = field(default_factory=FocalParams)
    noise: NoiseModel = field(default_factory=NoiseModel)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    scene: SceneConfig = field(default_factory=SceneConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    ablation: AblationSettings = field(default_factory=AblationSettings)
    simulate: SimulateSettings = field(default_factory=SimulateSettings)
    seed: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise InvalidConfig("config root must be a JSON object")
        unknown = set(data) - _SECTIONS.keys() - {"seed"}
        if unknown:
            raise InvalidConfig(f"unknown config sections: {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        for name, builder in _SECTIONS.items():
            if name in data:
                kwargs[name] = builder(data[name])
        if "seed" in data:
            kwargs["seed"] = _seed(data["seed"])
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = {
            "skeleton": self.skeleton.to_dict(),
            "pipeline": {"min_confidence": self.pipeline.min_confidence},
            "seed": self.seed,
        }
        for name in _SECTIONS:
            if name not in out:
                out[name] = _jsonable(dataclasses.asdict(getattr(self, name)))
        return {name: out[name] for name in list(_SECTIONS) + ["seed"]}

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(self.nms, self.pipeline.min_confidence)

    def ablation_config(self) -> AblationConfig:
        a = self.ablation
        return AblationConfig(a.strategies, a.n_trials, a.n_train_scenes, a.n_test_scenes, self.seed,
                              self.scene, self.noise, self.trainer, self.pipeline_config(), self.assigner,
                              self.skeleton)


def _seed(value) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise InvalidConfig("seed must be a non-negative integer")
    return value


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise InvalidConfig(f"{where}: expected a JSON object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise InvalidConfig(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except InvalidConfig as exc:
        raise InvalidConfig(f"{where}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"{where}: {exc}") from None


def _assigner(data) -> AssignerConfig:
    if isinstance(data, dict) and "level_bounds" in data and isinstance(data["level_bounds"], list):
        data = dict(data, level_bounds=[math.inf if b is None else b for b in data["level_bounds"]])
    return _build(AssignerConfig, data, "assigner")


def _pipeline(data) -> PipelineConfig:
    if not isinstance(data, dict) or set(data) - {"min_confidence"}:
        raise InvalidConfig("pipeline: only 'min_confidence' is configurable (NMS lives in 'nms')")
    value = data.get("min_confidence", PipelineConfig.min_confidence)
    if not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
        raise InvalidConfig("pipeline.min_confidence must be in [0, 1]")
    return PipelineConfig(min_confidence=float(value))


def _skeleton(data) -> SkeletonSpec:
    if not isinstance(data, dict):
        raise InvalidConfig("skeleton: expected a JSON object")
    try:
        return SkeletonSpec.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"skeleton: {exc}") from None


_SECTIONS = {
    "skeleton": _skeleton,
    "assigner": _assigner,
    "nms": lambda d: _build(NmsConfig, d, "nms"),
    "loss_weights": lambda d: _build(LossWeights, d, "loss_weights"),
    "focal": lambda d: _build(FocalParams, d, "focal"),
    "noise": lambda d: _build(NoiseModel, d, "noise"),
    "strategy": lambda d: _build(StrategyConfig, d, "strategy"),
    "scene": lambda d: _build(SceneConfig, d, "scene"),
    "trainer": lambda d: _build(TrainerConfig, d, "trainer"),
    "pipeline": _pipeline,
    "ablation": lambda d: _build(AblationSettings, d, "ablation"),
    "simulate": lambda d: _build(SimulateSettings, d, "simulate"),
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return None
    return obj


def load_config(path: str | Path | None = None, environ: dict | None = None) -> RunConfig:
    """Read a config file; without ``path`` fall back to ``$DENSEPOSE_KIT_CONFIG``, then defaults."""
    environ = os.environ if environ is None else environ
    path = path or environ.get(CONFIG_ENV_VAR) or None
    if path is None:
        return RunConfig()
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror}") from None
    return RunConfig.from_dict(data)
