"""
Reference models: one-shot weight averaging with supervised server
fine-tuning, and a centralized model trained on every client's data.
"""

import logging
from typing import Dict, Optional, Sequence

import numpy as np

from ..core.exceptions import ConfigError, ContractError
from ..models.segmodel import SegModel, SegModelConfig, init_model
from ..scenes.domain import DomainDataset
from ..tensor import Tensor
from ..training.config import TrainConfig
from ..training.trainer import ClientTrainer

logger = logging.getLogger(__name__)


def fedavg_aggregate(
    models: Sequence[SegModel], weights: Optional[Sequence[float]] = None
) -> SegModel:
    """Parameter-wise weighted average; the result keeps the clients' query count."""
    if not models:
        raise ContractError("need at least one model to aggregate")
    config = models[0].config
    for model in models[1:]:
        if model.config != config:
            raise ConfigError(f"architecture mismatch: {config} vs {model.config}")
    if weights is None:
        w = np.full(len(models), 1.0 / len(models))
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (len(models),):
            raise ContractError(f"expected {len(models)} weights, got {w.shape}")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ContractError("aggregation weights must be >= 0 and sum to 1")

    params: Dict[str, Tensor] = {}
    for name in models[0].parameters():
        stacked = np.stack([m.parameters()[name].data for m in models])
        params[name] = Tensor(np.tensordot(w, stacked, axes=1), requires_grad=True, name=name)
    logger.info(f"Averaged {len(models)} models with weights {np.round(w, 4).tolist()}")
    return SegModel(config, params)


def fedavg_finetune(
    aggregated: SegModel, server_labeled: DomainDataset, cfg: TrainConfig, seed: int = 0
) -> SegModel:
    """Supervised fine-tuning of a copy of ``aggregated`` on the labeled server set."""
    server_labeled.require_labels("FedAvg fine-tuning")
    model = aggregated.copy()
    return ClientTrainer(model, server_labeled, cfg, seed, name="fedavg").train()


def pool_datasets(datasets: Sequence[DomainDataset]) -> DomainDataset:
    scenes = [scene for d in datasets for scene in d.scenes]
    return DomainDataset("+".join(d.domain_id for d in datasets), scenes, labeled=True)


def train_centralized(
    datasets: Sequence[DomainDataset],
    model_cfg: SegModelConfig,
    cfg: TrainConfig,
    seed: int,
) -> SegModel:
    """Upper-bound model trained with access to every client's labeled data."""
    if not datasets:
        raise ContractError("need at least one dataset")
    for d in datasets:
        d.require_labels("centralized training")
    pooled = pool_datasets(datasets)
    model = init_model(model_cfg, seed)
    return ClientTrainer(model, pooled, cfg, seed, name="centralized").train()
