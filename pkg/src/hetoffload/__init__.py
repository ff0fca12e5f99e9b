"""Small-cell ON/OFF traffic offloading in heterogeneous cellular networks.

A macrocell-scale simulator (energy and loading models, reward), demand
ingestion and synthesis, demand forecasters, and five control schemes:
macro-only, static, tabular Q-learning, DQN and DQN on forecast demand.
"""

from .agents import (
    DqnForecastPolicy,
    DqnPolicy,
    MacroPolicy,
    QLearningPolicy,
    StaticPolicy,
)
from .config import ExperimentConfig, load_config
from .data import DemandSeries, synth_traffic, train_test_split
from .env import DecisionWindows
from .harness import Report, run_evaluation, run_experiment, run_training
from .hetnet import CellLayout, DistributionPolicy
from .mdp import RewardParams, step

__version__ = "0.1.0"

__all__ = [
    "CellLayout",
    "DecisionWindows",
    "DemandSeries",
    "DistributionPolicy",
    "DqnForecastPolicy",
    "DqnPolicy",
    "ExperimentConfig",
    "MacroPolicy",
    "QLearningPolicy",
    "Report",
    "RewardParams",
    "StaticPolicy",
    "load_config",
    "run_evaluation",
    "run_experiment",
    "run_training",
    "step",
    "synth_traffic",
    "train_test_split",
]
