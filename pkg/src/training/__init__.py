"""Supervised set-prediction training."""

from .config import TrainConfig
from .losses import SetLossTerms, matching_cost, set_loss, set_loss_terms, soft_dice_rows
from .matching import assignment_cost, hungarian_match
from .targets import GTSegments, downsample_majority
from .trainer import ClientTrainer, TrainStep, full_gradients, train_client

__all__ = [
    "ClientTrainer",
    "GTSegments",
    "SetLossTerms",
    "TrainConfig",
    "TrainStep",
    "assignment_cost",
    "downsample_majority",
    "full_gradients",
    "hungarian_match",
    "matching_cost",
    "set_loss",
    "set_loss_terms",
    "soft_dice_rows",
    "train_client",
]
