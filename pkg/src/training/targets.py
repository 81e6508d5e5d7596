"""
Per-class target segments at mask resolution.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..core.exceptions import DimensionError
from ..models.inference import IGNORE_INDEX, LabelMap


def downsample_majority(labels: LabelMap, size: Tuple[int, int], num_classes: int) -> np.ndarray:
    """Majority vote over each block, ignoring ignore pixels.

    Ties go to the smaller class id; an all-ignore block stays ``IGNORE_INDEX``.
    """
    out_h, out_w = size
    h, w = labels.shape
    if h % out_h or w % out_w:
        raise DimensionError(f"label map {labels.shape} is not a multiple of {size}")
    bh, bw = h // out_h, w // out_w
    blocks = labels.ids.reshape(out_h, bh, out_w, bw).transpose(0, 2, 1, 3)
    blocks = blocks.reshape(out_h, out_w, bh * bw)
    votes = (blocks[..., None] == np.arange(num_classes)).sum(axis=2)
    result = np.argmax(votes, axis=2).astype(np.uint8)
    result[votes.sum(axis=2) == 0] = IGNORE_INDEX
    return result


@dataclass
class GTSegments:
    """One binary mask per class present, at ``H' x W'``.

    ``valid`` marks mask pixels that are not ignore; mask losses only look
    at those.
    """

    class_ids: np.ndarray
    masks: np.ndarray
    valid: np.ndarray

    def __len__(self) -> int:
        return int(self.class_ids.shape[0])

    @property
    def is_empty(self) -> bool:
        return len(self) == 0

    @classmethod
    def empty(cls, size: Tuple[int, int]) -> "GTSegments":
        return cls(
            class_ids=np.zeros(0, dtype=np.int64),
            masks=np.zeros((0, *size)),
            valid=np.ones(size, dtype=bool),
        )

    @classmethod
    def from_label_map(
        cls, labels: LabelMap, size: Tuple[int, int], num_classes: int
    ) -> "GTSegments":
        small = downsample_majority(labels, size, num_classes)
        present = np.unique(small[small != IGNORE_INDEX]).astype(np.int64)
        masks = (small[None, :, :] == present[:, None, None]).astype(np.float64)
        return cls(class_ids=present, masks=masks, valid=small != IGNORE_INDEX)
