"""Miniature query-based segmentation models."""

from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint
from .inference import IGNORE_INDEX, LabelMap, predict_label_map, semantic_inference
from .segmodel import (
    LogitPair,
    SegModel,
    SegModelConfig,
    backbone_forward,
    decode,
    init_model,
    predict,
)

__all__ = [
    "IGNORE_INDEX",
    "LabelMap",
    "LogitPair",
    "SegModel",
    "SegModelConfig",
    "backbone_forward",
    "decode",
    "init_model",
    "load_checkpoint",
    "predict",
    "predict_label_map",
    "read_checkpoint",
    "save_checkpoint",
    "semantic_inference",
    "write_checkpoint",
]
