"""
Set-prediction loss: Hungarian matching of queries to per-class segments,
then class cross-entropy plus BCE and Dice on matched masks.
"""

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from ..core.exceptions import DimensionError
from ..models.segmodel import LogitPair
from ..tensor import Tensor, constant
from ..tensor import functional as F
from ..tensor.primitives import softmax_array, stable_sigmoid
from .config import TrainConfig
from .matching import Assignment, hungarian_match
from .targets import GTSegments


def soft_dice_rows(probs: Tensor, targets: Tensor, eps: float = 1.0) -> Tensor:
    """Per-row ``1 - (2 sum(s t) + eps) / (sum(s^2) + sum(t^2) + eps)``."""
    inter = F.sum_axis(F.mul(probs, targets), axis=1)
    numer = F.scalar_add(F.scalar_mul(inter, 2.0), eps)
    denom = F.add(
        F.sum_axis(F.mul(probs, probs), axis=1),
        F.scalar_add(F.sum_axis(F.mul(targets, targets), axis=1), eps),
    )
    return 1.0 - F.div(numer, denom)


def matching_cost(pred: LogitPair, gt: GTSegments, cfg: TrainConfig) -> np.ndarray:
    """``Q x S`` cost of assigning each query to each target segment."""
    q = pred.num_queries
    logits = pred.mask.data.reshape(q, -1)
    targets = gt.masks.reshape(len(gt), -1)
    valid = gt.valid.reshape(-1).astype(np.float64)
    n_valid = max(float(valid.sum()), 1.0)

    cost_cls = -softmax_array(pred.cls.data, axis=1)[:, gt.class_ids]
    cost_bce = (np.logaddexp(0.0, logits) @ valid)[:, None] / n_valid
    cost_bce = cost_bce - (logits * valid) @ targets.T / n_valid
    probs = stable_sigmoid(logits) * valid
    numer = 2.0 * probs @ targets.T + cfg.dice_eps
    denom = (probs**2).sum(axis=1)[:, None] + (targets**2).sum(axis=1)[None, :] + cfg.dice_eps
    cost_dice = 1.0 - numer / denom
    return cfg.w_cls * cost_cls + cfg.w_bce * cost_bce + cfg.w_dice * cost_dice


@dataclass
class SetLossTerms:
    """Unweighted loss components, their weights and the weighted total."""

    total: Tensor
    cls: Tensor
    bce: Tensor
    dice: Tensor
    weights: Tuple[float, float, float]
    assignment: Assignment

    def contributions(self) -> Dict[str, float]:
        w_cls, w_bce, w_dice = self.weights
        return {
            "cls": w_cls * self.cls.item(),
            "bce": w_bce * self.bce.item(),
            "dice": w_dice * self.dice.item(),
        }


def set_loss_terms(pred: LogitPair, gt: GTSegments, cfg: TrainConfig) -> SetLossTerms:
    q, n_cols = pred.cls.shape
    mask_size = pred.mask.shape[1:]
    if len(gt) and gt.masks.shape[1:] != mask_size:
        raise DimensionError(f"target masks {gt.masks.shape[1:]} do not match {mask_size}")
    background = n_cols - 1

    assignment = hungarian_match(matching_cost(pred, gt, cfg)) if len(gt) else []

    # Weighted one-hot class targets, normalised by the total weight.
    target_cls = np.full(q, background, dtype=np.int64)
    row_weight = np.full(q, cfg.no_object_weight)
    for query, segment in assignment:
        target_cls[query] = gt.class_ids[segment]
        row_weight[query] = 1.0
    weight_sum = row_weight.sum()
    onehot = np.zeros((q, n_cols))
    if weight_sum > 0:
        onehot[np.arange(q), target_cls] = row_weight / weight_sum
    cls_term = -F.sum_axis(F.mul(F.log_softmax(pred.cls, axis=1), constant(onehot)))

    if assignment:
        n_seg = len(assignment)
        select = np.zeros((n_seg, q))
        targets = np.zeros((n_seg, int(np.prod(mask_size))))
        for row, (query, segment) in enumerate(assignment):
            select[row, query] = 1.0
            targets[row] = gt.masks[segment].reshape(-1)
        valid = gt.valid.reshape(1, -1).astype(np.float64)
        n_valid = max(float(valid.sum()), 1.0)

        matched = F.matmul(constant(select), F.reshape(pred.mask, (q, targets.shape[1])))
        bce_weights = np.repeat(valid, n_seg, axis=0) / (n_seg * n_valid)
        bce_term = F.sum_axis(
            F.mul(F.bce_with_logits(matched, constant(targets)), constant(bce_weights))
        )
        probs = F.mul(F.sigmoid(matched), constant(np.repeat(valid, n_seg, axis=0)))
        dice_term = F.mean_axis(soft_dice_rows(probs, constant(targets), cfg.dice_eps))
    else:
        bce_term = constant(0.0)
        dice_term = constant(0.0)

    total = F.add(
        F.scalar_mul(cls_term, cfg.w_cls),
        F.add(F.scalar_mul(bce_term, cfg.w_bce), F.scalar_mul(dice_term, cfg.w_dice)),
    )
    return SetLossTerms(
        total=total,
        cls=cls_term,
        bce=bce_term,
        dice=dice_term,
        weights=(cfg.w_cls, cfg.w_bce, cfg.w_dice),
        assignment=assignment,
    )


def set_loss(pred: LogitPair, gt: GTSegments, cfg: TrainConfig) -> Tensor:
    """Weighted set-prediction loss for one image.

    Each term is scaled by its weight in ``cfg``. With no target segments only
    the all-background classification term remains, so an empty image costs
    ``w_cls`` times its cross-entropy.
    """
    return set_loss_terms(pred, gt, cfg).total
