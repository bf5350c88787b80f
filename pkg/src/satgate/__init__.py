"""Satisfiability-gated safe reinforcement learning for autonomous cyber defense."""

from .config import ExperimentConfig, load_config, parse_config_text
from .loop import Agent, EvalMetrics, TrainResult, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Agent",
    "EvalMetrics",
    "ExperimentConfig",
    "TrainResult",
    "evaluate",
    "load_config",
    "parse_config_text",
    "train",
    "__version__",
]
