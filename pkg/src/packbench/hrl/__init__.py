"""Hierarchical Q-learning: manager (sequence) and worker (placement) scorers."""

from .checkpoint import load_checkpoint, save_checkpoint
from .features import ManagerInput, WorkerInput, manager_features, worker_features
from .policy import LearnedPlanner, Recorder
from .qlearning import ReplayBuffer, Transition, manager_select, td_update, worker_select
from .scorers import ManagerNet, WorkerNet, build_scorer
from .train import TrainSchedule, train

__all__ = [
    "LearnedPlanner",
    "ManagerInput",
    "ManagerNet",
    "Recorder",
    "ReplayBuffer",
    "TrainSchedule",
    "Transition",
    "WorkerInput",
    "WorkerNet",
    "build_scorer",
    "load_checkpoint",
    "manager_features",
    "manager_select",
    "save_checkpoint",
    "td_update",
    "train",
    "worker_features",
    "worker_select",
]
