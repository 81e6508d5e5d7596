import itertools
from dataclasses import replace

import numpy as np
import pytest

from src.core.exceptions import ConfigError, ContractError, DimensionError, NumericalError
from src.models import LogitPair, SegModel, init_model, predict, save_checkpoint
from src.models.inference import IGNORE_INDEX, LabelMap
from src.scenes import make_domain
from src.tensor import Tensor, constant
from src.training import (
    ClientTrainer,
    GTSegments,
    TrainConfig,
    assignment_cost,
    downsample_majority,
    hungarian_match,
    set_loss,
    set_loss_terms,
    train_client,
)

from .conftest import GRAD_TOL, grad_error


def brute_force_cost(cost: np.ndarray) -> float:
    n, m = cost.shape
    if n <= m:
        rows = itertools.permutations(range(m), n)
        return min(sum(cost[i, p[i]] for i in range(n)) for p in rows)
    return min(sum(cost[p[j], j] for j in range(m)) for p in itertools.permutations(range(n), m))


def test_hungarian_small_example() -> None:
    cost = np.array([[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]])
    assignment = hungarian_match(cost)
    assert assignment == [(0, 1), (1, 0), (2, 2)]
    assert assignment_cost(cost, assignment) == 5.0


def test_hungarian_matches_brute_force(rng) -> None:
    """Optimal cost equals exhaustive search on random rectangular matrices."""
    for _ in range(1000):
        n, m = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        cost = rng.uniform(-1.0, 1.0, size=(n, m))
        assignment = hungarian_match(cost)
        assert len(assignment) == min(n, m)
        assert len({r for r, _ in assignment}) == len({c for _, c in assignment}) == min(n, m)
        assert assignment_cost(cost, assignment) == pytest.approx(brute_force_cost(cost))


def test_hungarian_rejects_bad_input() -> None:
    with pytest.raises(DimensionError):
        hungarian_match(np.zeros(3))
    with pytest.raises(NumericalError):
        hungarian_match(np.array([[0.0, np.nan]]))


def test_downsample_majority_ties_and_ignore() -> None:
    ids = np.array(
        [
            [1, 2, IGNORE_INDEX, IGNORE_INDEX],
            [2, 1, IGNORE_INDEX, IGNORE_INDEX],
            [3, 3, 4, 4],
            [3, 0, 4, IGNORE_INDEX],
        ],
        dtype=np.uint8,
    )
    small = downsample_majority(LabelMap(ids), (2, 2), num_classes=5)
    np.testing.assert_array_equal(small, [[1, IGNORE_INDEX], [3, 4]])


def test_segments_from_label_map() -> None:
    ids = np.zeros((4, 4), dtype=np.uint8)
    ids[2:, 2:] = 3
    gt = GTSegments.from_label_map(LabelMap(ids), (2, 2), num_classes=4)
    np.testing.assert_array_equal(gt.class_ids, [0, 3])
    np.testing.assert_array_equal(gt.masks[1], [[0, 0], [0, 1]])
    assert gt.valid.all()


def perfect_prediction(gt: GTSegments, num_queries: int, num_classes: int, scale: float = 20.0):
    """Logits confidently reproducing ``gt``; spare queries predict background."""
    cls = np.full((num_queries, num_classes + 1), -scale)
    mask = np.full((num_queries, *gt.valid.shape), -scale)
    for q in range(num_queries):
        if q < len(gt):
            cls[q, gt.class_ids[q]] = scale
            mask[q] = np.where(gt.masks[q] > 0, scale, -scale)
        else:
            cls[q, num_classes] = scale
    return LogitPair(constant(cls), constant(mask))


def test_set_loss_near_zero_on_perfect_prediction() -> None:
    ids = np.zeros((4, 4), dtype=np.uint8)
    ids[:, 2:] = 2
    gt = GTSegments.from_label_map(LabelMap(ids), (4, 4), num_classes=3)
    pred = perfect_prediction(gt, num_queries=4, num_classes=3)
    assert set_loss(pred, gt, TrainConfig()).item() < 1e-3


def test_set_loss_empty_target_is_background_ce() -> None:
    """Uniform logits and no segments cost log(C+1) of pure classification."""
    cfg = TrainConfig(w_cls=1.0)
    pred = LogitPair(constant(np.zeros((3, 5))), constant(np.zeros((3, 2, 2))))
    terms = set_loss_terms(pred, GTSegments.empty((2, 2)), cfg)
    assert terms.total.item() == pytest.approx(np.log(5.0))
    assert terms.bce.item() == 0.0 and terms.dice.item() == 0.0
    assert terms.assignment == []


def test_dice_weight_scales_only_dice(rng) -> None:
    """With a forced assignment, doubling w_dice doubles the Dice contribution alone."""
    gt = GTSegments(
        class_ids=np.array([1]),
        masks=(rng.uniform(size=(1, 3, 3)) > 0.5).astype(np.float64),
        valid=np.ones((3, 3), dtype=bool),
    )
    pred = LogitPair(
        constant(rng.standard_normal((1, 4))), constant(rng.standard_normal((1, 3, 3)))
    )
    base = set_loss_terms(pred, gt, TrainConfig()).contributions()
    doubled = set_loss_terms(pred, gt, TrainConfig(w_dice=10.0)).contributions()
    assert doubled["dice"] == pytest.approx(2.0 * base["dice"])
    assert doubled["cls"] == pytest.approx(base["cls"])
    assert doubled["bce"] == pytest.approx(base["bce"])


def test_ignore_pixels_do_not_count() -> None:
    """Mask logits on ignore pixels leave the loss unchanged."""
    ids = np.full((4, 4), 1, dtype=np.uint8)
    ids[0, :] = IGNORE_INDEX
    gt = GTSegments.from_label_map(LabelMap(ids), (4, 4), num_classes=2)
    cls = constant(np.array([[-1.0, 2.0, 0.0], [0.0, 0.0, 1.0]]))
    mask = np.zeros((2, 4, 4))
    a = set_loss(LogitPair(cls, constant(mask)), gt, TrainConfig()).item()
    mask[:, 0, :] = 7.0
    b = set_loss(LogitPair(cls, constant(mask)), gt, TrainConfig()).item()
    assert a == pytest.approx(b)


def test_set_loss_mismatched_masks() -> None:
    gt = GTSegments(np.array([0]), np.ones((1, 2, 2)), np.ones((2, 2), dtype=bool))
    pred = LogitPair(constant(np.zeros((2, 3))), constant(np.zeros((2, 3, 3))))
    with pytest.raises(DimensionError):
        set_loss(pred, gt, TrainConfig())


def test_set_loss_gradients(rng) -> None:
    """Tape gradients of the set loss wrt class and mask logits match differences."""
    ids = rng.integers(0, 3, size=(4, 4)).astype(np.uint8)
    gt = GTSegments.from_label_map(LabelMap(ids), (4, 4), num_classes=3)
    cls = rng.standard_normal((3, 4))
    mask = rng.standard_normal((3, 4, 4))
    cfg = TrainConfig()
    assert grad_error(lambda t: set_loss(LogitPair(t, constant(mask)), gt, cfg), cls) < GRAD_TOL
    assert grad_error(lambda t: set_loss(LogitPair(constant(cls), t), gt, cfg), mask) < GRAD_TOL


def test_model_loss_gradients_every_parameter(tiny_cfg, tiny_spec) -> None:
    """End-to-end loss gradient for every parameter group on a 2x2 feature map."""
    cfg = replace(tiny_cfg, height=8, width=8)
    model = init_model(cfg, seed=4)
    scene = make_domain(replace(tiny_spec, height=8, width=8), 1, seed=0).scenes[0]
    gt = GTSegments.from_label_map(scene.labels, (2, 2), cfg.num_classes)
    image = constant(scene.image)

    for name, param in model.parameters().items():

        def loss(t: Tensor, name: str = name) -> Tensor:
            swapped = SegModel(cfg, {**model.params, name: t})
            return set_loss(predict(swapped, image), gt, TrainConfig())

        assert grad_error(loss, param.data) < GRAD_TOL, name


def test_zero_iterations_leave_model_unchanged(tiny_cfg, tiny_spec) -> None:
    data = make_domain(tiny_spec, 2, seed=0)
    model = init_model(tiny_cfg, seed=1)
    before = save_checkpoint(model)
    ClientTrainer(model, data, TrainConfig(iterations=0), seed=1).train()
    assert save_checkpoint(model) == before


def test_training_is_deterministic(tiny_cfg, tiny_spec) -> None:
    """Same seed and data give byte-identical checkpoints."""
    data = make_domain(tiny_spec, 3, seed=0)
    cfg = TrainConfig(iterations=3, batch_size=2, lr=0.01)
    a = save_checkpoint(train_client(data, tiny_cfg, cfg, seed=11))
    b = save_checkpoint(train_client(data, tiny_cfg, cfg, seed=11))
    assert a == b
    assert a != save_checkpoint(init_model(tiny_cfg, 11))


def test_training_reduces_loss(tiny_cfg, tiny_spec) -> None:
    data = make_domain(tiny_spec, 2, seed=0)
    trainer = ClientTrainer(
        init_model(tiny_cfg, 2), data, TrainConfig(iterations=30, batch_size=2, lr=0.01), seed=2
    )
    trainer.train()
    first = np.mean([s.loss for s in trainer.history[:5]])
    last = np.mean([s.loss for s in trainer.history[-5:]])
    assert last < first
    assert trainer.get_status()["steps"] == 30


def test_unlabeled_data_rejected(tiny_cfg, tiny_spec) -> None:
    data = make_domain(tiny_spec, 2, seed=0, labeled=False)
    with pytest.raises(ContractError):
        train_client(data, tiny_cfg, TrainConfig(iterations=1), seed=0)


def test_batch_config_validation() -> None:
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"iterations": 3, "momentum": 0.9})
    assert replace(TrainConfig(), w_bce=1.0).w_bce == 1.0
