"""
Cross-client prediction inconsistency on the unlabeled server set.

Every client labels the server images; per-class predicted pixel
proportions are compared across clients, and classes whose coefficient of
variation exceeds a threshold are marked unstable.
"""

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from ..core.exceptions import ContractError, DimensionError
from ..models.inference import LabelMap, predict_label_map
from ..models.segmodel import SegModel
from ..scenes.domain import DomainDataset, Scene

logger = logging.getLogger(__name__)

DEFAULT_EPS = 1e-8
DEFAULT_THRESHOLD = 1.0


def predict_pseudo_labels(
    models: Sequence[SegModel], server_set: DomainDataset, workers: int = 1
) -> List[List[LabelMap]]:
    """``K x N`` label maps, one list per client, in server-set order."""
    if not models:
        raise ContractError("need at least one client model")
    num_classes = {m.config.num_classes for m in models}
    if len(num_classes) != 1:
        raise ContractError(f"client models disagree on class count: {sorted(num_classes)}")

    images = server_set.images
    pairs = [(k, i) for k in range(len(models)) for i in range(len(images))]

    def run(pair: Any) -> LabelMap:
        k, i = pair
        return predict_label_map(models[k], images[i])

    if workers > 1 and pairs:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            flat = list(pool.map(run, pairs))
    else:
        flat = [run(p) for p in pairs]
    n = len(images)
    return [flat[k * n : (k + 1) * n] for k in range(len(models))]


@dataclass
class ClassProportionMatrix:
    """Row k holds client k's predicted pixel share of each class in ``classes``."""

    values: np.ndarray
    counts: np.ndarray
    classes: List[int]
    client_ids: List[str]
    degenerate: np.ndarray

    @property
    def num_clients(self) -> int:
        return int(self.values.shape[0])


def class_proportions(
    labels: Sequence[Sequence[LabelMap]],
    classes: Sequence[int],
    client_ids: Optional[Sequence[str]] = None,
) -> ClassProportionMatrix:
    """Normalise aggregate per-class pixel counts over all images of each client.

    A client with no pixels in ``classes`` gets an all-zero row flagged
    degenerate.
    """
    if not classes:
        raise ContractError("class subset must be nonempty")
    cols = np.asarray(list(classes), dtype=np.int64)
    size = int(cols.max()) + 1
    counts = np.zeros((len(labels), len(cols)), dtype=np.int64)
    for k, maps in enumerate(labels):
        total = np.zeros(size, dtype=np.int64)
        for label_map in maps:
            total += label_map.class_counts(size)
        counts[k] = total[cols]
    sums = counts.sum(axis=1)
    degenerate = sums == 0
    values = np.zeros(counts.shape)
    values[~degenerate] = counts[~degenerate] / sums[~degenerate, None]
    ids = list(client_ids) if client_ids is not None else [str(k) for k in range(len(labels))]
    return ClassProportionMatrix(values, counts, [int(c) for c in cols], ids, degenerate)


@dataclass
class InconsistencyReport:
    classes: List[int]
    mu: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray
    eps: float
    threshold: float = DEFAULT_THRESHOLD
    unstable: List[int] = field(default_factory=list)
    excluded_clients: List[str] = field(default_factory=list)

    def score_of(self, class_id: int) -> float:
        return float(self.gamma[self.classes.index(class_id)])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eps": self.eps,
            "threshold": self.threshold,
            "unstable": list(self.unstable),
            "excluded_clients": list(self.excluded_clients),
            "classes": [
                {
                    "class_id": c,
                    "mu": float(self.mu[j]),
                    "sigma": float(self.sigma[j]),
                    "gamma": float(self.gamma[j]),
                }
                for j, c in enumerate(self.classes)
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "InconsistencyReport":
        rows = data["classes"]
        return cls(
            classes=[int(r["class_id"]) for r in rows],
            mu=np.array([r["mu"] for r in rows], dtype=np.float64),
            sigma=np.array([r["sigma"] for r in rows], dtype=np.float64),
            gamma=np.array([r["gamma"] for r in rows], dtype=np.float64),
            eps=float(data["eps"]),
            threshold=float(data["threshold"]),
            unstable=[int(c) for c in data["unstable"]],
            excluded_clients=list(data.get("excluded_clients", [])),
        )

    def write_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    @classmethod
    def read_json(cls, path: Union[str, Path]) -> "InconsistencyReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def inconsistency_scores(
    proportions: ClassProportionMatrix,
    eps: float = DEFAULT_EPS,
    threshold: float = DEFAULT_THRESHOLD,
) -> InconsistencyReport:
    """Mean, population standard deviation and ``sigma / (mu + eps)`` per class.

    Degenerate client rows are left out of the statistics.
    """
    if eps < 0:
        raise ContractError(f"eps must be >= 0, got {eps}")
    keep = ~proportions.degenerate
    excluded = [cid for cid, bad in zip(proportions.client_ids, proportions.degenerate) if bad]
    if excluded:
        logger.warning(f"Excluding clients with no pixels in the scored classes: {excluded}")

    n_cls = len(proportions.classes)
    if keep.any():
        rows = proportions.values[keep]
        mu = rows.mean(axis=0)
        sigma = np.sqrt(((rows - mu) ** 2).mean(axis=0))
    else:
        logger.warning("All clients are degenerate; every score is 0")
        mu = np.zeros(n_cls)
        sigma = np.zeros(n_cls)
    denom = mu + eps
    gamma = np.divide(sigma, denom, out=np.zeros(n_cls), where=denom > 0)

    report = InconsistencyReport(
        classes=list(proportions.classes),
        mu=mu,
        sigma=sigma,
        gamma=gamma,
        eps=eps,
        threshold=threshold,
        excluded_clients=excluded,
    )
    report.unstable = select_unstable(report, threshold)
    return report


def select_unstable(report: InconsistencyReport, threshold: float) -> List[int]:
    """Classes with score strictly above ``threshold``, ascending by id."""
    return sorted(c for c, g in zip(report.classes, report.gamma) if g > threshold)


def score_server_set(
    models: Sequence[SegModel],
    server_set: DomainDataset,
    classes: Sequence[int],
    eps: float = DEFAULT_EPS,
    threshold: float = DEFAULT_THRESHOLD,
    client_ids: Optional[Sequence[str]] = None,
    workers: int = 1,
) -> InconsistencyReport:
    """Pseudo-label the server set with every client model and score each class."""
    labels = predict_pseudo_labels(models, server_set, workers=workers)
    report = inconsistency_scores(class_proportions(labels, classes, client_ids), eps, threshold)
    summary = ", ".join(f"{c}:{g:.3f}" for c, g in zip(report.classes, report.gamma))
    logger.info(f"Inconsistency scores [{summary}]; unstable: {report.unstable}")
    return report


def build_distill_set(
    server_set: DomainDataset, augmentations: Mapping[int, Sequence[np.ndarray]]
) -> DomainDataset:
    """Unlabeled pool: server images first, then generated images by ascending class id."""
    shape = server_set.scenes[0].image.shape if len(server_set) else None
    scenes = [Scene(s.image) for s in server_set.scenes]
    for class_id in sorted(augmentations):
        for image in augmentations[class_id]:
            if shape is None:
                shape = image.shape
            if image.shape != shape:
                raise DimensionError(
                    f"augmentation for class {class_id} has shape {image.shape}, expected {shape}"
                )
            scenes.append(Scene(image))
    added = len(scenes) - len(server_set)
    logger.info(f"Distillation set: {len(server_set)} server + {added} generated images")
    return DomainDataset(f"{server_set.domain_id}+aug", scenes, labeled=False)
