"""
Exception hierarchy for the federated segmentation system.

Library code raises these; the application layer catches them at stage
boundaries and records the failure.
"""

from typing import Optional


class FedSegError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(FedSegError, ValueError):
    """Input shapes do not conform to an operation."""


class DomainError(FedSegError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class NumericalError(FedSegError, FloatingPointError):
    """A NaN or Inf appeared where only finite values are allowed."""


class ContractError(FedSegError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(FedSegError, ValueError):
    """Configuration is invalid or inconsistent."""


class CorruptCheckpointError(FedSegError, ValueError):
    """A checkpoint could not be parsed."""


class StageError(FedSegError, RuntimeError):
    """A pipeline stage failed."""

    def __init__(self, stage: str, message: str, cause: Optional[BaseException] = None):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
        self.cause = cause
