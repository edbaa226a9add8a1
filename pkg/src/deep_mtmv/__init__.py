"""Multi-view multi-task networks that widen themselves by clustering task affinities."""

from .architecture import ArchitectureTree, split_layer
from .config import TrainConfig, parse_config, serialize_config
from .datagen import MultiViewDataset, PlantedSpec, gen_synthetic, load_dataset, save_dataset
from .errors import (ConfigurationError, DimensionError, FormatError, MTMVError, NumericError,
                     StatisticsError, StructuralError, TrainingError, UsageError, ValidationError)
from .widening import deep_mtmv, evaluate

__version__ = "0.1.0"

__all__ = [
    "ArchitectureTree", "split_layer", "TrainConfig", "parse_config", "serialize_config",
    "MultiViewDataset", "PlantedSpec", "gen_synthetic", "load_dataset", "save_dataset",
    "deep_mtmv", "evaluate", "MTMVError", "ConfigurationError", "DimensionError", "FormatError",
    "NumericError", "StatisticsError", "StructuralError", "TrainingError", "UsageError", "ValidationError",
]
