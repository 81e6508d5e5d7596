"""
Label maps and semantic inference from query logits.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..core.exceptions import ContractError
from ..tensor import Tensor, no_grad
from ..tensor.primitives import softmax_array, stable_sigmoid
from .segmodel import LogitPair, SegModel, predict

IGNORE_INDEX = 255


@dataclass
class LabelMap:
    """Per-pixel class ids; ``IGNORE_INDEX`` marks unlabeled pixels."""

    ids: np.ndarray

    def __post_init__(self) -> None:
        self.ids = np.asarray(self.ids, dtype=np.uint8)
        if self.ids.ndim != 2:
            raise ContractError(f"label map must be 2-d, got shape {self.ids.shape}")

    @property
    def height(self) -> int:
        return int(self.ids.shape[0])

    @property
    def width(self) -> int:
        return int(self.ids.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def validate(self, num_classes: int) -> None:
        bad = (self.ids != IGNORE_INDEX) & (self.ids >= num_classes)
        if np.any(bad):
            raise ContractError(f"label ids must be < {num_classes} or {IGNORE_INDEX}")

    def class_counts(self, num_classes: int) -> np.ndarray:
        valid = self.ids[self.ids != IGNORE_INDEX]
        return np.bincount(valid.ravel(), minlength=num_classes)[:num_classes]


def class_scores(logits: LogitPair, num_classes: Optional[int] = None) -> np.ndarray:
    """``score[c, p] = sum_q softmax(cls_q)[c] * sigmoid(mask_q[p])`` over real classes."""
    cls = logits.cls.data
    c = cls.shape[1] - 1 if num_classes is None else num_classes
    probs = softmax_array(cls, axis=1)[:, :c]
    masks = stable_sigmoid(logits.mask.data).reshape(logits.num_queries, -1)
    return probs.T @ masks


def upsample_nearest(ids: np.ndarray, out_size: Tuple[int, int]) -> np.ndarray:
    height, width = out_size
    rows = (np.arange(height) * ids.shape[0]) // height
    cols = (np.arange(width) * ids.shape[1]) // width
    return ids[np.ix_(rows, cols)]


def semantic_inference(logits: LogitPair, out_size: Tuple[int, int]) -> LabelMap:
    """Per-pixel argmax of class scores, upsampled to ``out_size``.

    The background column never wins; ties go to the smaller class id.
    """
    _, h, w = logits.mask.shape
    scores = class_scores(logits)
    small = np.argmax(scores, axis=0).reshape(h, w)
    return LabelMap(upsample_nearest(small, out_size))


def predict_label_map(model: SegModel, image: np.ndarray) -> LabelMap:
    """Gradient-free prediction for one ``3 x H x W`` image array."""
    with no_grad():
        logits = predict(model, Tensor(image, copy=False))
    return semantic_inference(logits, (model.config.height, model.config.width))
