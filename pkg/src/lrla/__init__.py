"""Resource-constrained learned bandit algorithms.

A GRU meta-learner trained with a group-horseshoe variational objective, plus
the belief-factor probit analysis and Bayes-factor model comparison used to
read its strategy off behaviour.
"""
from .bandit import BanditTask, TaskDistribution, Trajectory, episode_regret, rollout, sample_task, step
from .belief import BaselineKind, Factors, compute_factors, init_belief, update_belief
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "BanditTask", "TaskDistribution", "Trajectory", "episode_regret", "rollout", "sample_task",
    "step", "BaselineKind", "Factors", "compute_factors", "init_belief", "update_belief",
    "TrainConfig", "evaluate", "train",
]
