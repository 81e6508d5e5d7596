"""Core application modules: errors, logging and the experiment runner."""

from .exceptions import (
    ConfigError,
    ContractError,
    CorruptCheckpointError,
    DimensionError,
    DomainError,
    FedSegError,
    NumericalError,
    StageError,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "CorruptCheckpointError",
    "DimensionError",
    "DomainError",
    "FedSegError",
    "NumericalError",
    "StageError",
]
