"""Federated learning simulator with performance-weighted peer aggregation (FedSmart)."""

from .config import ConfigError, ExperimentConfig, load_config
from .engine import RoundRecord, run_experiment, run_sweep
from .model import ClientUpdate, ContractError, Dataset, Example, ModelParams

__all__ = [
    "ClientUpdate",
    "ConfigError",
    "ContractError",
    "Dataset",
    "Example",
    "ExperimentConfig",
    "ModelParams",
    "RoundRecord",
    "load_config",
    "run_experiment",
    "run_sweep",
]
