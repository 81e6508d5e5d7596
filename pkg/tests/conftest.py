"""Shared fixtures: tiny architectures, small domains and a fast experiment config."""

from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from src.config import ExperimentConfig
from src.models import SegModelConfig
from src.scenes import DomainSpec
from src.tensor import Tensor, finite_diff_check

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

GRAD_TOL = 1e-4


def grad_error(f: Callable[[Tensor], Tensor], x: np.ndarray) -> float:
    """Relative error of tape gradients; the floor absorbs difference noise at zero gradients."""
    return finite_diff_check(f, Tensor(x), eps=1e-5, floor=1e-6)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg() -> SegModelConfig:
    return SegModelConfig(
        num_classes=6,
        num_queries=3,
        feature_channels=4,
        backbone_depth=2,
        embed_dim=4,
        height=16,
        width=16,
    )


@pytest.fixture
def tiny_spec() -> DomainSpec:
    return DomainSpec("tiny", num_classes=6, height=16, width=16)


@pytest.fixture
def smoke_config(tmp_path: Path) -> ExperimentConfig:
    config = ExperimentConfig.from_yaml(CONFIG_DIR / "smoke.yaml")
    return config.with_overrides(output_dir=str(tmp_path / "run"))
