"""Multi-head self-attention person re-identification (C++ core)."""

from ._core import (
    Config,
    ConfigError,
    ContainerError,
    ContractError,
    CrcError,
    DataError,
    Dataset,
    DimensionError,
    Error,
    Model,
    NumericError,
    Report,
    TrainResult,
    average_precision,
    cmc_map,
    evaluate,
    generate_dataset,
    gradcheck,
    load_checkpoint,
    load_config,
    load_dataset,
    occlusion_score,
    parse_config,
    sweep,
    train,
)

__version__ = "0.1.0"
