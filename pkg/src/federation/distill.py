"""
Label-free distillation of K frozen client models into one global model.

Client backbones are averaged into a fused feature map, every client's
decoder reads it, and the concatenated per-query outputs (K*Q rows) become
the targets for a global model with K*Q queries: temperature-scaled KL on
class logits and BCE plus Dice on mask logits. Student query i is paired
with concatenated teacher row i.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.exceptions import ConfigError, ContractError, DimensionError
from ..models.segmodel import (
    LogitPair,
    SegModel,
    SegModelConfig,
    backbone_forward,
    decode,
    init_model,
    predict,
)
from ..scenes.domain import DomainDataset
from ..tensor import AdamWState, GradTape, Tensor, adamw_step, backward, constant, no_grad
from ..tensor import functional as F
from ..tensor.primitives import log_softmax_array, softmax_array, stable_sigmoid
from ..training.losses import soft_dice_rows
from ..training.trainer import full_gradients
from ..utils.helpers import write_csv

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DistillConfig:
    temperature: float = 1.0
    lambda_cls: float = 1.0
    lambda_mask: float = 1.0
    iterations: int = 200
    batch_size: int = 2
    lr: float = 1e-4
    weight_decay: float = 0.05
    fusion_enabled: bool = True
    include_background: bool = True
    use_bce: bool = True
    use_dice: bool = True
    dice_eps: float = 1.0
    teacher_workers: int = 1
    log_every: int = 50

    def validate(self) -> None:
        if self.temperature <= 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.lambda_cls < 0 or self.lambda_mask < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.iterations < 0 or self.batch_size < 1:
            raise ConfigError("iterations must be >= 0 and batch_size >= 1")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError("lr must be positive and weight_decay >= 0")
        if self.dice_eps <= 0:
            raise ConfigError("dice_eps must be positive")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DistillConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown distill config keys: {sorted(unknown)}")
        config = cls(**data)
        config.validate()
        return config


@dataclass
class TeacherBundle:
    """Concatenated client outputs; rows ``[kQ, (k+1)Q)`` come from client k."""

    cls: np.ndarray
    mask: np.ndarray
    client_order: List[str]
    queries_per_client: int

    @property
    def num_rows(self) -> int:
        return int(self.cls.shape[0])

    def block(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        q = self.queries_per_client
        return self.cls[k * q : (k + 1) * q], self.mask[k * q : (k + 1) * q]


def fuse_features(features: Sequence[Tensor]) -> Tensor:
    """Elementwise mean of client feature maps, as a constant."""
    if not features:
        raise ContractError("need at least one feature map to fuse")
    shape = features[0].shape
    for f in features[1:]:
        if f.shape != shape:
            raise DimensionError(f"feature shapes differ: {shape} vs {f.shape}")
    return constant(np.mean(np.stack([f.data for f in features]), axis=0))


def _check_clients(clients: Sequence[SegModel]) -> SegModelConfig:
    if not clients:
        raise ContractError("need at least one client model")
    config = clients[0].config
    for model in clients[1:]:
        if model.config != config:
            raise ContractError(f"client configs differ: {config} vs {model.config}")
    return config


def teacher_logits(
    clients: Sequence[SegModel],
    image: np.ndarray,
    fusion_enabled: bool = True,
    client_ids: Optional[Sequence[str]] = None,
    workers: int = 1,
) -> TeacherBundle:
    """Frozen client outputs on one image, concatenated in client order."""
    config = _check_clients(clients)
    x = constant(image)

    def run_backbone(model: SegModel) -> Tensor:
        with no_grad():
            return backbone_forward(model, x)

    def run_decoder(args: Tuple[SegModel, Tensor]) -> LogitPair:
        with no_grad():
            return decode(*args)

    pool: Optional[ThreadPoolExecutor] = None
    if workers > 1 and len(clients) > 1:
        pool = ThreadPoolExecutor(max_workers=workers)
    try:
        if pool:
            features = list(pool.map(run_backbone, clients))
        else:
            features = [run_backbone(m) for m in clients]
        if fusion_enabled:
            with no_grad():
                fused = fuse_features(features)
            inputs = [(m, fused) for m in clients]
        else:
            inputs = list(zip(clients, features))
        outputs = list(pool.map(run_decoder, inputs)) if pool else [run_decoder(a) for a in inputs]
    finally:
        if pool:
            pool.shutdown()

    ids = list(client_ids) if client_ids is not None else [str(k) for k in range(len(clients))]
    return TeacherBundle(
        cls=np.concatenate([o.cls.data for o in outputs], axis=0),
        mask=np.concatenate([o.mask.data for o in outputs], axis=0),
        client_order=ids,
        queries_per_client=config.num_queries,
    )


def _drop_background(x: Tensor) -> Tensor:
    cols = x.shape[1]
    keep = np.eye(cols)[:, : cols - 1]
    return F.matmul(x, constant(keep))


def kl_cls_loss(
    teacher_cls: np.ndarray,
    student_cls: Tensor,
    temperature: float = 1.0,
    include_background: bool = True,
) -> Tensor:
    """Row-averaged ``KL(softmax(t / tau) || softmax(s / tau))``."""
    teacher_cls = np.asarray(teacher_cls, dtype=np.float64)
    if teacher_cls.shape != student_cls.shape:
        raise DimensionError(f"teacher {teacher_cls.shape} vs student {student_cls.shape}")
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    if not include_background:
        teacher_cls = teacher_cls[:, :-1]
        student_cls = _drop_background(student_cls)
    rows = teacher_cls.shape[0]
    log_p = log_softmax_array(teacher_cls / temperature, axis=1)
    p = softmax_array(teacher_cls / temperature, axis=1)
    log_q = F.log_softmax(F.scalar_mul(student_cls, 1.0 / temperature), axis=1)
    cross = F.sum_axis(F.mul(constant(p), log_q))
    return F.scalar_add(F.scalar_mul(cross, -1.0 / rows), float(np.sum(p * log_p)) / rows)


def mask_distill_terms(
    teacher_mask: np.ndarray, student_mask: Tensor, dice_eps: float = 1.0
) -> Tuple[Tensor, Tensor]:
    """BCE (mean over all entries) and Dice (mean over queries) against sigmoid teacher masks."""
    teacher_mask = np.asarray(teacher_mask, dtype=np.float64)
    if teacher_mask.shape != student_mask.shape:
        raise DimensionError(f"teacher {teacher_mask.shape} vs student {student_mask.shape}")
    rows = teacher_mask.shape[0]
    targets = constant(stable_sigmoid(teacher_mask).reshape(rows, -1))
    logits = F.reshape(student_mask, targets.shape)
    bce = F.mean_axis(F.bce_with_logits(logits, targets))
    dice = F.mean_axis(soft_dice_rows(F.sigmoid(logits), targets, dice_eps))
    return bce, dice


def mask_distill_loss(
    teacher_mask: np.ndarray,
    student_mask: Tensor,
    dice_eps: float = 1.0,
    use_bce: bool = True,
    use_dice: bool = True,
) -> Tensor:
    bce, dice = mask_distill_terms(teacher_mask, student_mask, dice_eps)
    if use_bce and use_dice:
        return F.add(bce, dice)
    if use_bce:
        return bce
    if use_dice:
        return dice
    return constant(0.0)


@dataclass
class DistillStep:
    step: int
    loss_cls: float
    loss_mask: float
    loss_total: float


class GlobalDistiller:
    """Trains a fresh global model against frozen client teachers.

    Teacher bundles are cached per image; teachers never change.
    """

    def __init__(
        self,
        clients: Sequence[SegModel],
        distill_set: DomainDataset,
        student: SegModel,
        config: DistillConfig,
        seed: int,
        client_ids: Optional[Sequence[str]] = None,
    ):
        config.validate()
        client_cfg = _check_clients(clients)
        expected = client_cfg.with_queries(len(clients) * client_cfg.num_queries)
        if student.config != expected:
            raise ConfigError(
                f"global model needs {expected.num_queries} queries "
                f"({len(clients)} clients x {client_cfg.num_queries}); got {student.config}"
            )
        if not len(distill_set):
            raise ContractError("distillation set is empty")
        self.clients = list(clients)
        self.client_ids = list(client_ids) if client_ids else [str(k) for k in range(len(clients))]
        self.distill_set = distill_set
        self.student = student
        self.config = config
        self.rng = np.random.default_rng([int(seed), 2])
        self.optimizer = AdamWState.for_params(
            student.parameters(), lr=config.lr, weight_decay=config.weight_decay
        )
        self.history: List[DistillStep] = []
        self.skipped_updates = 0
        self._bundles: Dict[int, TeacherBundle] = {}

    def bundle(self, index: int) -> TeacherBundle:
        """Teacher logits for distillation image ``index``, computed once."""
        if index not in self._bundles:
            self._bundles[index] = teacher_logits(
                self.clients,
                self.distill_set.scenes[index].image,
                self.config.fusion_enabled,
                self.client_ids,
                self.config.teacher_workers,
            )
        return self._bundles[index]

    def image_losses(self, index: int) -> Tuple[Tensor, Tensor]:
        """Unweighted classification and mask losses of the student on one image."""
        cfg = self.config
        bundle = self.bundle(index)
        pred = predict(self.student, constant(self.distill_set.scenes[index].image))
        loss_cls = kl_cls_loss(bundle.cls, pred.cls, cfg.temperature, cfg.include_background)
        loss_mask = mask_distill_loss(
            bundle.mask, pred.mask, cfg.dice_eps, cfg.use_bce, cfg.use_dice
        )
        return loss_cls, loss_mask

    def step(self) -> DistillStep:
        """One optimizer update on a sampled batch; returns the batch-mean losses."""
        cfg = self.config
        batch = self.rng.integers(0, len(self.distill_set), size=cfg.batch_size)
        scale = 1.0 / len(batch)
        weights_zero = cfg.lambda_cls == 0 and cfg.lambda_mask == 0
        with GradTape():
            totals: List[Tensor] = []
            sum_cls = 0.0
            sum_mask = 0.0
            for index in batch:
                loss_cls, loss_mask = self.image_losses(int(index))
                sum_cls += loss_cls.item()
                sum_mask += loss_mask.item()
                totals.append(
                    F.add(
                        F.scalar_mul(loss_cls, cfg.lambda_cls),
                        F.scalar_mul(loss_mask, cfg.lambda_mask),
                    )
                )
            total = totals[0]
            for t in totals[1:]:
                total = F.add(total, t)
            total = F.scalar_mul(total, scale)
            grads = None
            if not weights_zero:
                grads = backward(total) if total.grad_node is not None else {}

        if grads is None:
            self.skipped_updates += 1
        else:
            full = full_gradients(self.student, grads)
            adamw_step(self.student.parameters(), full, self.optimizer)

        record = DistillStep(len(self.history) + 1, sum_cls * scale, sum_mask * scale, total.item())
        self.history.append(record)
        return record

    def train(self) -> SegModel:
        """Run every configured iteration and return the student."""
        cfg = self.config
        logger.info(
            f"Distilling {len(self.clients)} clients into {self.student.config.num_queries} "
            f"queries: {cfg.iterations} iterations on {len(self.distill_set)} images "
            f"(fusion: {cfg.fusion_enabled})"
        )
        if cfg.lambda_cls == 0 and cfg.lambda_mask == 0 and cfg.iterations:
            logger.warning("Both distillation loss weights are 0; parameters will not change")
        for _ in range(cfg.iterations):
            record = self.step()
            message = (
                f"step {record.step}: L_cls {record.loss_cls:.4f} "
                f"L_m {record.loss_mask:.4f} total {record.loss_total:.4f}"
            )
            if cfg.log_every and record.step % cfg.log_every == 0:
                logger.info(message)
            else:
                logger.debug(message)
        return self.student

    def write_curve(self, path: Union[str, Path]) -> Path:
        return write_curve_csv(self.history, path)

    def get_status(self) -> Dict[str, Any]:
        """Progress counters for logging and the CLI."""
        return {
            "steps": len(self.history),
            "skipped_updates": self.skipped_updates,
            "cached_bundles": len(self._bundles),
            "last_loss": self.history[-1].loss_total if self.history else None,
        }


def write_curve_csv(history: Sequence[DistillStep], path: Union[str, Path]) -> Path:
    """One row per step: step, cls, mask and total loss."""
    return write_csv(
        path,
        ["step", "L_cls", "L_m", "L_total"],
        ([h.step, h.loss_cls, h.loss_mask, h.loss_total] for h in history),
    )


@dataclass
class DistillResult:
    model: SegModel
    history: List[DistillStep] = field(default_factory=list)


def distill_global_with_history(
    clients: Sequence[SegModel],
    distill_set: DomainDataset,
    model_cfg: SegModelConfig,
    config: DistillConfig,
    seed: int,
    client_ids: Optional[Sequence[str]] = None,
) -> DistillResult:
    """Like ``distill_global`` but keeps the per-step loss history."""
    student = init_model(model_cfg, seed)
    distiller = GlobalDistiller(clients, distill_set, student, config, seed, client_ids)
    return DistillResult(distiller.train(), distiller.history)


def distill_global(
    clients: Sequence[SegModel],
    distill_set: DomainDataset,
    model_cfg: SegModelConfig,
    config: DistillConfig,
    seed: int,
) -> SegModel:
    """Freshly initialised global model distilled from ``clients``; reads no labels."""
    return distill_global_with_history(clients, distill_set, model_cfg, config, seed).model
