"""Seeded experiment harnesses: score-mode comparison, refine-threshold sweep, strategy ablation.

Every random draw is keyed by ``(seed, trial, stream, index)`` so that all
strategies of one trial see the same training and test scenes, and results do
not depend on how work is spread over processes.
"""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..assign import AssignerConfig
from ..core import SkeletonSpec
from ..errors import InvalidConfig, NoPositives
from ..evaluation import METRIC_NAMES, EvalResult
from ..postprocess import SCORE_MODES
from .pipeline import PipelineConfig, evaluate_predictions
from .predict import NoiseModel, simulate_dense
from .scene import SceneConfig, SimScene, generate_scene
from .toytrain import TABLE1_STRATEGIES, StrategyConfig, TrainerConfig, toy_train

# Stream ids inside a trial key.
TRAIN_STREAM, TEST_STREAM, PREDICT_STREAM, FIT_STREAM, SCORE_STREAM = range(5)

CSV_HEADER = ("name", "positive_rule", "refine_rule", "refine_threshold", "score_mode") + METRIC_NAMES
REFINE_SWEEP_THRESHOLDS = (0.0, 0.25, 0.5, 0.75, 0.9)


@dataclass(frozen=True)
class AblationConfig:
    strategies: tuple[StrategyConfig, ...] = TABLE1_STRATEGIES
    n_trials: int = 3
    n_train_scenes: int = 30
    n_test_scenes: int = 20
    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    noise: NoiseModel = field(default_factory=NoiseModel)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    assigner: AssignerConfig = field(default_factory=AssignerConfig)
    spec: SkeletonSpec = field(default_factory=SkeletonSpec.coco)

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(self.strategies))
        if self.n_trials < 1 or self.n_train_scenes < 1 or self.n_test_scenes < 1:
            raise InvalidConfig("n_trials, n_train_scenes and n_test_scenes must be >= 1")


@dataclass(frozen=True)
class TrialResult:
    result: EvalResult
    n_positives1: int
    n_positives2: int
    # True when the refinement stage had no positives and the first-stage model was used alone.
    fallback: bool = False


def trial_scenes(cfg: AblationConfig, trial: int) -> tuple[list[SimScene], list[SimScene]]:
    def make(stream, n):
        return [generate_scene((cfg.seed, trial, stream, i), cfg.scene, cfg.spec, cfg.assigner) for i in range(n)]
    return make(TRAIN_STREAM, cfg.n_train_scenes), make(TEST_STREAM, cfg.n_test_scenes)


def train_and_evaluate(
    strategy: StrategyConfig,
    train: Sequence[SimScene],
    test: Sequence[SimScene],
    cfg: AblationConfig,
    trial: int,
) -> TrialResult:
    fallback = False
    try:
        model = toy_train(train, strategy, cfg.trainer, cfg.noise, (cfg.seed, trial, FIT_STREAM),
                          cfg.spec, cfg.assigner)
    except NoPositives as exc:
        if exc.model is None:
            raise
        model, fallback = exc.model, True
    denses = [model.predict(scene, (cfg.seed, trial, PREDICT_STREAM, i)) for i, scene in enumerate(test)]
    result = evaluate_predictions(test, denses, strategy.score_mode, cfg.pipeline, cfg.spec)
    return TrialResult(result, model.n_positives1, model.n_positives2, fallback)


def _run_trial(args: tuple[AblationConfig, int]) -> list[TrialResult]:
    cfg, trial = args
    train, test = trial_scenes(cfg, trial)
    return [train_and_evaluate(s, train, test, cfg, trial) for s in cfg.strategies]


def _map(fn, tasks: list, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def mean_result(results: Sequence[EvalResult]) -> EvalResult:
    """Metric-wise mean; buckets that are undefined (-1) in every trial stay -1."""
    table = np.array([r.as_tuple() for r in results], dtype=float)
    out = []
    for col in table.T:
        valid = col[col >= 0]
        out.append(float(valid.mean()) if len(valid) else -1.0)
    return EvalResult(*out)


@dataclass(eq=False)
class AblationReport:
    config: AblationConfig
    trials: list[list[TrialResult]]  # [strategy][trial]

    @property
    def rows(self) -> list[EvalResult]:
        return [mean_result([t.result for t in ts]) for ts in self.trials]

    def trial_ap(self, strategy: int) -> np.ndarray:
        return np.array([t.result.ap for t in self.trials[strategy]])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for s, row in zip(self.config.strategies, self.rows):
            writer.writerow([s.label, s.positive_rule, s.refine_rule, f"{s.refine_threshold:g}", s.score_mode]
                            + [f"{v:.6f}" for v in row.as_tuple()])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "rows": [
                {"strategy": s.to_dict(), "name": s.label, "metrics": row.to_dict(),
                 "trial_ap": [t.result.ap for t in ts],
                 "n_positives1": [t.n_positives1 for t in ts],
                 "n_positives2": [t.n_positives2 for t in ts],
                 "fallback_trials": [i for i, t in enumerate(ts) if t.fallback]}
                for s, row, ts in zip(self.config.strategies, self.rows, self.trials)
            ],
        }


def run_strategy_ablation(cfg: AblationConfig = AblationConfig(), jobs: int = 1) -> AblationReport:
    """Train and evaluate every strategy on ``n_trials`` paired scene sets.

    Output is identical for any ``jobs``; trials are farmed out to processes
    and gathered in trial order.
    """
    if not cfg.strategies:
        return AblationReport(cfg, [])
    per_trial = _map(_run_trial, [(cfg, t) for t in range(cfg.n_trials)], jobs)
    return AblationReport(cfg, [[per_trial[t][s] for t in range(cfg.n_trials)]
                                for s in range(len(cfg.strategies))])


def refine_sweep_strategies(
    thresholds: Sequence[float] = REFINE_SWEEP_THRESHOLDS,
    score_mode: str = "cls",
) -> tuple[StrategyConfig, ...]:
    return tuple(StrategyConfig("shrunk-box", "oks-threshold", float(t), score_mode, name=f"oks>={t:g}")
                 for t in thresholds)


def run_refine_sweep(
    cfg: AblationConfig = AblationConfig(),
    thresholds: Sequence[float] = REFINE_SWEEP_THRESHOLDS,
    score_mode: str = "cls",
    jobs: int = 1,
) -> AblationReport:
    """AP against the refinement-positive OKS threshold (``cfg.strategies`` is ignored)."""
    return run_strategy_ablation(replace(cfg, strategies=refine_sweep_strategies(thresholds, score_mode)), jobs)


def run_scoring_experiment(
    scenes: Sequence[SimScene],
    noise: NoiseModel = NoiseModel(),
    seed: int = 0,
    modes: Sequence[str] = SCORE_MODES,
    pipeline: PipelineConfig = PipelineConfig(),
    spec: SkeletonSpec | None = None,
    assigner: AssignerConfig = AssignerConfig(),
) -> dict[str, EvalResult]:
    """Simulate dense predictions once, then rank them under each score mode."""
    spec = spec or SkeletonSpec.coco()
    denses = [simulate_dense(scene, noise, (seed, SCORE_STREAM, i), spec, assigner) for i, scene in enumerate(scenes)]
    return {mode: evaluate_predictions(scenes, denses, mode, pipeline, spec) for mode in modes}
