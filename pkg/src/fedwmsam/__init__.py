"""Deterministic federated-optimization simulator: FedWMSAM and baselines."""
from ._kernels import BACKEND
from .algorithms import KINDS, ConfigError, DivergenceError, OptimizerConfig
from .engine import ObjectiveSpec, PartitionSpec, RunConfig, run

__version__ = "0.1.0"

__all__ = ["BACKEND", "KINDS", "ConfigError", "DivergenceError", "ObjectiveSpec",
           "OptimizerConfig", "PartitionSpec", "RunConfig", "run", "__version__"]
