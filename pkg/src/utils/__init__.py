"""Utility modules for the federated segmentation system."""

from .helpers import (
    canonical_json,
    config_hash,
    derive_seed,
    derive_seed_map,
    format_float,
    read_csv,
    write_csv,
)

__all__ = [
    "canonical_json",
    "config_hash",
    "derive_seed",
    "derive_seed_map",
    "format_float",
    "read_csv",
    "write_csv",
]
