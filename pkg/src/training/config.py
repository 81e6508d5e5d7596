"""Supervised training hyperparameters."""

from dataclasses import asdict, dataclass
from typing import Any, Dict, Mapping

from ..core.exceptions import ConfigError


@dataclass(frozen=True)
class TrainConfig:
    """Set-prediction training settings.

    ``w_cls``, ``w_bce`` and ``w_dice`` weight both the matching cost and
    the loss terms; unmatched queries are pushed toward background with
    ``no_object_weight``.
    """

    iterations: int = 200
    batch_size: int = 2
    lr: float = 1e-4
    weight_decay: float = 0.05
    w_cls: float = 2.0
    w_bce: float = 5.0
    w_dice: float = 5.0
    no_object_weight: float = 0.1
    dice_eps: float = 1.0
    log_every: int = 50

    def validate(self) -> None:
        if self.iterations < 0:
            raise ConfigError(f"iterations must be >= 0, got {self.iterations}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        weights = {
            "weight_decay": self.weight_decay,
            "w_cls": self.w_cls,
            "w_bce": self.w_bce,
            "w_dice": self.w_dice,
            "no_object_weight": self.no_object_weight,
        }
        negative = [k for k, v in weights.items() if v < 0]
        if negative:
            raise ConfigError(f"weights must be >= 0: {negative}")
        if self.dice_eps <= 0:
            raise ConfigError("dice_eps must be positive")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrainConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        config = cls(**data)
        config.validate()
        return config
