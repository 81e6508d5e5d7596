"""
Confusion-matrix segmentation metrics.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..core.exceptions import ContractError, DimensionError
from ..models.inference import IGNORE_INDEX, LabelMap, predict_label_map
from ..models.segmodel import SegModel
from ..scenes.domain import DomainDataset

logger = logging.getLogger(__name__)


@dataclass
class ConfusionMatrix:
    """Pixel counts, rows are ground truth and columns are predictions."""

    num_classes: int
    counts: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.counts is None:
            self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.num_classes, self.num_classes):
            raise DimensionError(f"counts must be {self.num_classes}x{self.num_classes}")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise DimensionError("cannot add confusion matrices of different sizes")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)


def pair_counts(pred: LabelMap, gt: LabelMap, num_classes: int) -> np.ndarray:
    """Confusion counts of one image pair; rows are ground truth, columns prediction."""
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    valid = gt.ids != IGNORE_INDEX
    g = gt.ids[valid].astype(np.int64)
    p = pred.ids[valid].astype(np.int64)
    if g.size and (g.max() >= num_classes or p.max() >= num_classes):
        raise ContractError(f"label ids must be < {num_classes}")
    return np.bincount(num_classes * g + p, minlength=num_classes**2).reshape(
        num_classes, num_classes
    )


def accumulate(cm: ConfusionMatrix, pred: LabelMap, gt: LabelMap) -> ConfusionMatrix:
    """New matrix with the non-ignore pixels of one (pred, gt) pair added."""
    return ConfusionMatrix(cm.num_classes, cm.counts + pair_counts(pred, gt, cm.num_classes))


def iou(cm: ConfusionMatrix, exclude_absent: bool = True) -> np.ndarray:
    """Per-class TP / (TP + FP + FN).

    Classes absent from both ground truth and prediction are NaN, or 0 with
    ``exclude_absent=False``.
    """
    tp = np.diag(cm.counts).astype(np.float64)
    union = cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - tp
    fill = np.nan if exclude_absent else 0.0
    return np.divide(tp, union, out=np.full(cm.num_classes, fill), where=union > 0)


def miou(cm: ConfusionMatrix, exclude_absent: bool = True) -> float:
    """Mean IoU over the defined classes; NaN when none are."""
    values = iou(cm, exclude_absent)
    defined = values[~np.isnan(values)]
    return float(defined.mean()) if defined.size else float("nan")


@dataclass
class DomainReport:
    domain_id: str
    ious: np.ndarray
    miou: float
    num_images: int
    confusion: ConfusionMatrix
    class_names: List[str] = field(default_factory=list)


@dataclass
class EvaluationSummary:
    reports: List[DomainReport]
    average_miou: float

    @property
    def domain_ids(self) -> List[str]:
        return [r.domain_id for r in self.reports]


def report_from_confusion(
    domain_id: str,
    cm: ConfusionMatrix,
    num_images: int,
    class_names: Optional[Sequence[str]] = None,
    exclude_absent: bool = True,
) -> DomainReport:
    names = list(class_names) if class_names else [str(c) for c in range(cm.num_classes)]
    return DomainReport(
        domain_id=domain_id,
        ious=iou(cm, exclude_absent),
        miou=miou(cm, exclude_absent),
        num_images=num_images,
        confusion=cm,
        class_names=names,
    )


def evaluate_model(
    model: SegModel,
    dataset: DomainDataset,
    class_names: Optional[Sequence[str]] = None,
    exclude_absent: bool = True,
    workers: int = 1,
) -> DomainReport:
    """Score ``model`` on a labeled domain, optionally across worker threads."""
    dataset.require_labels("evaluation")
    num_classes = model.config.num_classes

    def score(index: int) -> np.ndarray:
        scene = dataset.scenes[index]
        if scene.labels is None:
            raise ContractError(f"scene {index} of '{dataset.domain_id}' has no labels")
        return pair_counts(predict_label_map(model, scene.image), scene.labels, num_classes)

    indices = range(len(dataset))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(score, indices))
    else:
        parts = [score(i) for i in indices]
    counts = np.sum(parts, axis=0) if parts else None
    cm = ConfusionMatrix(num_classes, counts)
    report = report_from_confusion(dataset.domain_id, cm, len(dataset), class_names, exclude_absent)
    logger.info(f"Domain '{dataset.domain_id}': mIoU {report.miou:.4f} over {len(dataset)} images")
    return report


def average_miou(reports: Sequence[DomainReport]) -> float:
    """Unweighted mean of per-domain mIoU."""
    if not reports:
        return float("nan")
    return float(np.mean([r.miou for r in reports]))


def evaluate_on_domains(
    model: SegModel,
    target_domains: Sequence[DomainDataset],
    class_names: Optional[Sequence[str]] = None,
    exclude_absent: bool = True,
    workers: int = 1,
) -> EvaluationSummary:
    """Evaluate one model on every target domain."""
    reports = [
        evaluate_model(model, d, class_names, exclude_absent, workers) for d in target_domains
    ]
    return EvaluationSummary(reports, average_miou(reports))
