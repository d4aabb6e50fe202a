"""Dataset, checkpoint, configuration, and training orchestration."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import AblationFlags, DatasetConfig, RunConfig, default_config
from .data import gen_dataset, read_dataset, to_float, write_dataset
from .train import (
    build_prunable_layers,
    evaluate_checkpoint,
    inspect_checkpoint,
    reconfigure_checkpoint,
    refine,
    search,
)

__all__ = [
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "AblationFlags",
    "DatasetConfig",
    "RunConfig",
    "default_config",
    "gen_dataset",
    "read_dataset",
    "to_float",
    "write_dataset",
    "build_prunable_layers",
    "evaluate_checkpoint",
    "inspect_checkpoint",
    "reconfigure_checkpoint",
    "refine",
    "search",
]
