"""Natural-gradient deep Q-learning on classic control tasks."""

from .envs import EnvKind
from .fisher import DampingState, EigenEstimateConfig, FisherOperator
from .net import ActivationKind, LayerSpec, Mlp, init_network
from .rl import Method, RunRecord, TrainConfig, train
from .solvers import SolveConfig, SolveReport, SolverKind

__all__ = [
    "ActivationKind",
    "DampingState",
    "EigenEstimateConfig",
    "EnvKind",
    "FisherOperator",
    "LayerSpec",
    "Method",
    "Mlp",
    "RunRecord",
    "SolveConfig",
    "SolveReport",
    "SolverKind",
    "TrainConfig",
    "init_network",
    "train",
]
