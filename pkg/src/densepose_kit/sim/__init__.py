"""Synthetic scenes, simulated predictors, a toy trainer and ablation harnesses."""

from .experiments import (
    AblationConfig,
    AblationReport,
    run_refine_sweep,
    run_scoring_experiment,
    run_strategy_ablation,
)
from .pipeline import PipelineConfig, evaluate_predictions, scenes_to_gt
from .predict import DenseHypotheses, NoiseModel, simulate_dense, simulate_predictions
from .scene import SceneConfig, SimScene, generate_scene
from .toytrain import TABLE1_STRATEGIES, StrategyConfig, ToyPredictor, TrainerConfig, toy_train

__all__ = [
    "AblationConfig", "AblationReport", "DenseHypotheses", "NoiseModel", "PipelineConfig",
    "SceneConfig", "SimScene", "StrategyConfig", "TABLE1_STRATEGIES", "ToyPredictor", "TrainerConfig",
    "evaluate_predictions", "generate_scene", "run_refine_sweep", "run_scoring_experiment",
    "run_strategy_ablation", "scenes_to_gt", "simulate_dense", "simulate_predictions", "toy_train",
]
