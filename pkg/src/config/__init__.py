"""Configuration management for the federated segmentation system."""

from .experiment import DomainEntry, ExperimentConfig, rotate_roles
from .settings import LoggingSettings, RuntimeSettings, Settings, get_settings, reset_settings

__all__ = [
    "DomainEntry",
    "ExperimentConfig",
    "LoggingSettings",
    "RuntimeSettings",
    "Settings",
    "get_settings",
    "reset_settings",
    "rotate_roles",
]
