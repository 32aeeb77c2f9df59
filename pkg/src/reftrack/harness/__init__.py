"""Run harness: configs, data files, checkpoints, experiments, CLI."""

from reftrack.harness.config import (
    DataConfig,
    LossConfig,
    ModelConfig,
    RunConfig,
    TemporalConfig,
    ThresholdConfig,
    TrainConfig,
    config_from_dict,
    config_hash,
    config_to_dict,
    desk_profile,
    load_config,
    full_profile,
)
from reftrack.harness.errors import ConfigError, DataError

__all__ = [
    "ConfigError",
    "DataConfig",
    "DataError",
    "LossConfig",
    "ModelConfig",
    "RunConfig",
    "TemporalConfig",
    "ThresholdConfig",
    "TrainConfig",
    "config_from_dict",
    "config_hash",
    "config_to_dict",
    "desk_profile",
    "load_config",
    "full_profile",
]
