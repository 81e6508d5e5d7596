from dataclasses import replace

import numpy as np
import pytest

from src.core.exceptions import ConfigError, DimensionError
from src.federation import (
    DistillConfig,
    GlobalDistiller,
    distill_global,
    distill_global_with_history,
    fuse_features,
    kl_cls_loss,
    mask_distill_loss,
    mask_distill_terms,
    teacher_logits,
    write_curve_csv,
)
from src.models import SegModel, init_model, save_checkpoint
from src.scenes import make_domain
from src.tensor import GradTape, Tensor, backward, constant
from src.tensor import functional as F
from src.utils import read_csv

from .conftest import GRAD_TOL, grad_error


def softmax(x):
    e = np.exp(x - x.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@pytest.fixture
def server(tiny_spec):
    return make_domain(tiny_spec, 3, seed=5, labeled=False)


def test_fuse_features_mean() -> None:
    a = np.arange(8.0).reshape(2, 2, 2)
    np.testing.assert_array_equal(fuse_features([Tensor(a)]).data, a)
    fused = fuse_features([Tensor(np.zeros((2, 2, 2))), Tensor(2 * a)])
    np.testing.assert_allclose(fused.data, a)
    with pytest.raises(DimensionError):
        fuse_features([Tensor(a), Tensor(np.zeros((2, 2, 3)))])


def test_kl_identity_is_zero(rng) -> None:
    for tau in (0.5, 1.0, 3.0):
        t = rng.standard_normal((6, 5)) * 4
        assert abs(kl_cls_loss(t, constant(t), tau).item()) < 1e-12


def test_kl_hand_example() -> None:
    """Confident teacher against a uniform student."""
    p = softmax(np.array([[10.0, 0.0]]))[0]
    expected = float(np.sum(p * np.log(p / 0.5)))
    got = kl_cls_loss(np.array([[10.0, 0.0]]), constant(np.zeros((1, 2)))).item()
    assert got == pytest.approx(expected, rel=1e-10)


def test_kl_is_nonnegative(rng) -> None:
    for _ in range(1000):
        t = rng.standard_normal((2, 3)) * 3
        s = rng.standard_normal((2, 3)) * 3
        assert kl_cls_loss(t, constant(s), float(rng.uniform(0.5, 2.0))).item() >= -1e-12


def test_kl_without_background(rng) -> None:
    """Dropping the last column scores only the real classes."""
    t = rng.standard_normal((3, 4))
    s = rng.standard_normal((3, 4))
    full = kl_cls_loss(t[:, :-1], constant(s[:, :-1])).item()
    assert kl_cls_loss(t, constant(s), include_background=False).item() == pytest.approx(full)


def test_kl_gradient(rng) -> None:
    t = rng.standard_normal((4, 5))
    s = rng.standard_normal((4, 5))
    assert grad_error(lambda x: kl_cls_loss(t, x, temperature=2.0), s) < GRAD_TOL


def test_mask_loss_matches_loop_oracle(rng) -> None:
    teacher = rng.standard_normal((2, 2, 2))
    student = rng.standard_normal((2, 2, 2))
    t = 1.0 / (1.0 + np.exp(-teacher))
    s = 1.0 / (1.0 + np.exp(-student))
    bce = 0.0
    dice = 0.0
    for q in range(2):
        inter = sq_t = sq_s = 0.0
        for y in range(2):
            for x in range(2):
                tv, sv = t[q, y, x], s[q, y, x]
                bce -= tv * np.log(sv) + (1 - tv) * np.log(1 - sv)
                inter += tv * sv
                sq_t += tv * tv
                sq_s += sv * sv
        dice += 1 - (2 * inter + 1.0) / (sq_t + sq_s + 1.0)
    expected = bce / 8 + dice / 2
    assert mask_distill_loss(teacher, constant(student)).item() == pytest.approx(expected)


def test_mask_loss_saturated_limits() -> None:
    """Matching saturated masks cost about 0; inverted ones cost about 1 Dice per query."""
    teacher = np.where(np.arange(8).reshape(2, 2, 2) % 2 == 0, 30.0, -30.0)
    bce, dice = mask_distill_terms(teacher, constant(teacher))
    assert bce.item() < 1e-6 and dice.item() < 1e-6
    _, inverted = mask_distill_terms(teacher, constant(-teacher))
    assert inverted.item() == pytest.approx(1.0 - 1.0 / (2 + 2 + 1), abs=1e-6)


def test_mask_loss_gradient(rng) -> None:
    teacher = rng.standard_normal((3, 2, 2))
    student = rng.standard_normal((3, 2, 2))
    assert grad_error(lambda x: mask_distill_loss(teacher, x), student) < GRAD_TOL
    with pytest.raises(DimensionError):
        mask_distill_loss(teacher, constant(np.zeros((2, 2, 2))))


def test_mask_loss_switches(rng) -> None:
    teacher = rng.standard_normal((2, 2, 2))
    student = constant(rng.standard_normal((2, 2, 2)))
    bce, dice = mask_distill_terms(teacher, student)
    assert mask_distill_loss(teacher, student, use_dice=False).item() == bce.item()
    assert mask_distill_loss(teacher, student, use_bce=False).item() == dice.item()
    assert mask_distill_loss(teacher, student, use_bce=False, use_dice=False).item() == 0.0


def test_bundle_shapes_and_tiling(tiny_cfg, server) -> None:
    """Identical clients under fusion repeat the single-client bundle row for row."""
    model = init_model(tiny_cfg, 1)
    image = server.scenes[0].image
    single = teacher_logits([model], image)
    double = teacher_logits([model, model], image)
    assert double.cls.shape == (6, 7) and double.mask.shape == (6, 4, 4)
    np.testing.assert_array_equal(double.cls, np.tile(single.cls, (2, 1)))
    np.testing.assert_array_equal(double.block(1)[1], single.mask)
    triple = teacher_logits([model, model, model], image)
    np.testing.assert_allclose(triple.cls, np.tile(single.cls, (3, 1)), atol=1e-12)


def test_fusion_switch_changes_bundle(tiny_cfg, server) -> None:
    clients = [init_model(tiny_cfg, 1), init_model(tiny_cfg, 2)]
    image = server.scenes[0].image
    fused = teacher_logits(clients, image, fusion_enabled=True)
    separate = teacher_logits(clients, image, fusion_enabled=False)
    assert not np.allclose(fused.cls, separate.cls)


def test_parallel_teachers_match_serial(tiny_cfg, server) -> None:
    clients = [init_model(tiny_cfg, s) for s in (1, 2, 3)]
    image = server.scenes[1].image
    serial = teacher_logits(clients, image, workers=1)
    parallel = teacher_logits(clients, image, workers=3)
    np.testing.assert_array_equal(serial.cls, parallel.cls)
    np.testing.assert_array_equal(serial.mask, parallel.mask)


def test_client_permutation_permutes_blocks(tiny_cfg, server) -> None:
    a, b = init_model(tiny_cfg, 1), init_model(tiny_cfg, 2)
    image = server.scenes[0].image
    ab = teacher_logits([a, b], image, client_ids=["a", "b"])
    ba = teacher_logits([b, a], image, client_ids=["b", "a"])
    np.testing.assert_allclose(ab.block(0)[0], ba.block(1)[0], atol=1e-12)
    assert ba.client_order == ["b", "a"]


def test_loss_invariant_to_client_order(tiny_cfg, server) -> None:
    """Reordering clients along with the student's query blocks leaves both losses unchanged."""
    clients = [init_model(tiny_cfg, 1), init_model(tiny_cfg, 2)]
    student = init_model(tiny_cfg.with_queries(6), 0)
    queries = student.params["decoder.query_embed"].data
    swapped = np.concatenate([queries[3:], queries[:3]])
    reordered = SegModel(
        student.config,
        {
            **student.params,
            "decoder.query_embed": Tensor(swapped, requires_grad=True, name="decoder.query_embed"),
        },
    )
    cfg = DistillConfig(iterations=1)
    for index in range(len(server)):
        forward = GlobalDistiller(clients, server, student, cfg, seed=0).image_losses(index)
        backward_order = GlobalDistiller(clients[::-1], server, reordered, cfg, seed=0)
        for a, b in zip(forward, backward_order.image_losses(index)):
            assert b.item() == pytest.approx(a.item(), rel=1e-9, abs=1e-12)


def test_global_query_count_enforced(tiny_cfg, server) -> None:
    clients = [init_model(tiny_cfg, 1), init_model(tiny_cfg, 2)]
    with pytest.raises(ConfigError):
        distill_global(clients, server, tiny_cfg, DistillConfig(iterations=1), seed=0)


def test_teachers_receive_no_gradients(tiny_cfg, server) -> None:
    clients = [init_model(tiny_cfg, 1), init_model(tiny_cfg, 2)]
    student = init_model(tiny_cfg.with_queries(6), 0)
    distiller = GlobalDistiller(clients, server, student, DistillConfig(iterations=1), seed=0)
    with GradTape():
        loss_cls, loss_mask = distiller.image_losses(0)
        grads = backward(F.add(loss_cls, loss_mask))
    teacher_params = {id(p) for m in clients for p in m.parameters().values()}
    assert not any(id(t) in teacher_params for t in grads)
    assert any(p in grads for p in student.parameters().values())


def test_zero_weights_leave_student_unchanged(tiny_cfg, server) -> None:
    clients = [init_model(tiny_cfg, 1)]
    cfg = DistillConfig(iterations=3, lambda_cls=0.0, lambda_mask=0.0, lr=0.01)
    student = init_model(tiny_cfg, 9)
    before = save_checkpoint(student)
    distiller = GlobalDistiller(clients, server, student, cfg, seed=9)
    distiller.train()
    assert save_checkpoint(student) == before
    assert distiller.get_status()["skipped_updates"] == 3


def test_distillation_deterministic_and_curve(tiny_cfg, server, tmp_path) -> None:
    clients = [init_model(tiny_cfg, 1), init_model(tiny_cfg, 2)]
    cfg = DistillConfig(iterations=3, batch_size=2, lr=0.01)
    global_cfg = tiny_cfg.with_queries(6)
    first = distill_global_with_history(clients, server, global_cfg, cfg, seed=4)
    second = distill_global(clients, server, global_cfg, cfg, seed=4)
    assert save_checkpoint(first.model) == save_checkpoint(second)
    rows = read_csv(write_curve_csv(first.history, tmp_path / "curve.csv"))
    assert list(rows[0]) == ["step", "L_cls", "L_m", "L_total"]
    assert [int(r["step"]) for r in rows] == [1, 2, 3]


def test_distillation_reduces_loss(tiny_cfg, server) -> None:
    clients = [init_model(tiny_cfg, 1)]
    cfg = DistillConfig(iterations=40, batch_size=1, lr=0.01)
    result = distill_global_with_history(clients, server, tiny_cfg, cfg, seed=3)
    first = np.mean([h.loss_total for h in result.history[:8]])
    last = np.mean([h.loss_total for h in result.history[-8:]])
    assert last < first


def test_config_validation() -> None:
    with pytest.raises(ConfigError):
        DistillConfig(temperature=0.0).validate()
    with pytest.raises(ConfigError):
        DistillConfig.from_dict({"lambda_cls": -1.0})
    with pytest.raises(ConfigError):
        DistillConfig.from_dict({"alpha": 1.0})
    assert replace(DistillConfig(), fusion_enabled=False).fusion_enabled is False
