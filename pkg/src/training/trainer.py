"""
Supervised training of a segmentation model on one labeled domain.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np

from ..models.segmodel import SegModel, SegModelConfig, init_model, predict
from ..scenes.domain import DomainDataset
from ..tensor import AdamWState, GradTape, Tensor, adamw_step, backward, constant
from ..tensor import functional as F
from .config import TrainConfig
from .losses import set_loss_terms
from .targets import GTSegments

logger = logging.getLogger(__name__)


@dataclass
class TrainStep:
    step: int
    loss: float
    cls: float
    bce: float
    dice: float


def full_gradients(model: SegModel, grads: Dict[Tensor, Tensor]) -> Dict[str, np.ndarray]:
    """Name-keyed gradients, zero for parameters the loss did not reach."""
    return {
        name: grads[p].data if p in grads else np.zeros_like(p.data)
        for name, p in model.parameters().items()
    }


class ClientTrainer:
    """Runs AdamW on the set-prediction loss over minibatches of one dataset.

    The model passed in is updated in place.
    """

    def __init__(
        self,
        model: SegModel,
        dataset: DomainDataset,
        config: TrainConfig,
        seed: int,
        name: Optional[str] = None,
    ):
        dataset.require_labels("supervised training")
        config.validate()
        self.model = model
        self.dataset = dataset
        self.config = config
        self.name = name or dataset.domain_id
        self.rng = np.random.default_rng([int(seed), 1])
        self.optimizer = AdamWState.for_params(
            model.parameters(), lr=config.lr, weight_decay=config.weight_decay
        )
        mcfg = model.config
        size = (mcfg.feature_height, mcfg.feature_width)
        self.targets = [
            GTSegments.from_label_map(scene.labels, size, mcfg.num_classes)
            for scene in dataset.scenes
            if scene.labels is not None
        ]
        self.history: List[TrainStep] = []
        self.step_count = 0

    def step(self) -> TrainStep:
        batch = self.rng.integers(0, len(self.dataset), size=self.config.batch_size)
        scale = 1.0 / len(batch)
        with GradTape():
            totals: List[Tensor] = []
            parts = np.zeros(3)
            for index in batch:
                image = constant(self.dataset.scenes[int(index)].image)
                pred = predict(self.model, image)
                terms = set_loss_terms(pred, self.targets[int(index)], self.config)
                parts += [terms.cls.item(), terms.bce.item(), terms.dice.item()]
                totals.append(terms.total)
            loss = totals[0]
            for total in totals[1:]:
                loss = F.add(loss, total)
            loss = F.scalar_mul(loss, scale)
            grads = backward(loss) if loss.grad_node is not None else {}
        adamw_step(self.model.parameters(), full_gradients(self.model, grads), self.optimizer)

        self.step_count += 1
        parts *= scale
        record = TrainStep(self.step_count, loss.item(), *(float(v) for v in parts))
        self.history.append(record)
        return record

    def train(self) -> SegModel:
        cfg = self.config
        logger.info(
            f"Training '{self.name}': {cfg.iterations} iterations, batch {cfg.batch_size}, "
            f"{len(self.dataset)} scenes"
        )
        for _ in range(cfg.iterations):
            record = self.step()
            if cfg.log_every and record.step % cfg.log_every == 0:
                logger.info(f"[{self.name}] step {record.step}: loss {record.loss:.4f}")
            else:
                logger.debug(f"[{self.name}] step {record.step}: loss {record.loss:.4f}")
        return self.model

    def get_status(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "steps": self.step_count,
            "last_loss": self.history[-1].loss if self.history else None,
            "scenes": len(self.dataset),
        }


def train_client(
    dataset: DomainDataset,
    model_cfg: SegModelConfig,
    train_cfg: TrainConfig,
    seed: int,
) -> SegModel:
    """Initialise a model from ``seed`` and train it on a labeled domain."""
    dataset.require_labels("client training")
    model = init_model(model_cfg, seed)
    return ClientTrainer(model, dataset, train_cfg, seed).train()
