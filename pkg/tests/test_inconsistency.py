import math
from dataclasses import replace

import numpy as np
import pytest

from src.core.exceptions import ContractError, DimensionError
from src.federation import (
    ClassProportionMatrix,
    InconsistencyReport,
    build_distill_set,
    class_proportions,
    inconsistency_scores,
    predict_pseudo_labels,
    score_server_set,
    select_unstable,
)
from src.models import init_model
from src.models.inference import IGNORE_INDEX, LabelMap
from src.scenes import DomainDataset, make_domain


def label_map_with(counts, size=(10, 10)) -> LabelMap:
    """A label map holding ``counts[c]`` pixels of class c, rest ignore."""
    flat = np.full(size[0] * size[1], IGNORE_INDEX, dtype=np.uint8)
    start = 0
    for class_id, n in enumerate(counts):
        flat[start : start + n] = class_id
        start += n
    return LabelMap(flat.reshape(size))


def matrix(rows, classes=(0, 1)) -> ClassProportionMatrix:
    values = np.asarray(rows, dtype=np.float64)
    return ClassProportionMatrix(
        values=values,
        counts=(values * 100).astype(np.int64),
        classes=list(classes),
        client_ids=[str(k) for k in range(len(rows))],
        degenerate=values.sum(axis=1) == 0,
    )


def test_proportions_normalise_counts() -> None:
    p = class_proportions([[label_map_with([30, 70])]], [0, 1])
    np.testing.assert_allclose(p.values, [[0.3, 0.7]])
    only_a = class_proportions([[label_map_with([50, 0])]], [0, 1])
    np.testing.assert_allclose(only_a.values, [[1.0, 0.0]])


def test_proportions_aggregate_over_images() -> None:
    """Counts are pooled over all images before normalising."""
    maps = [label_map_with([10, 0]), label_map_with([0, 30])]
    p = class_proportions([maps], [0, 1])
    np.testing.assert_allclose(p.values, [[0.25, 0.75]])


def test_proportions_match_pixel_loop(rng) -> None:
    classes = [1, 3, 4]
    labels = [
        [LabelMap(rng.integers(0, 6, size=(5, 7)).astype(np.uint8)) for _ in range(3)]
        for _ in range(3)
    ]
    p = class_proportions(labels, classes)
    for k, maps in enumerate(labels):
        counts = np.zeros(len(classes))
        for m in maps:
            for y in range(m.height):
                for x in range(m.width):
                    if int(m.ids[y, x]) in classes:
                        counts[classes.index(int(m.ids[y, x]))] += 1
        np.testing.assert_allclose(p.values[k], counts / counts.sum())
        assert p.values[k].sum() == pytest.approx(1.0, abs=1e-9)


def test_two_client_hand_example() -> None:
    """p1=[0.2, 0.8] and p2=[0.4, 0.6] score 1/3 and 1/7 with zero eps."""
    p = class_proportions([[label_map_with([20, 80])], [label_map_with([40, 60])]], [0, 1])
    report = inconsistency_scores(p, eps=0.0)
    np.testing.assert_allclose(report.mu, [0.3, 0.7])
    np.testing.assert_allclose(report.sigma, [0.1, 0.1])
    np.testing.assert_allclose(report.gamma, [1 / 3, 1 / 7])
    assert report.unstable == []


def test_identical_clients_score_zero() -> None:
    report = inconsistency_scores(matrix([[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]]))
    np.testing.assert_array_equal(report.gamma, [0.0, 0.0])


def scalar_scores(counts, eps):
    """Mean, population deviation and ratio per class with plain loops."""
    rows = []
    for client in counts:
        total = sum(int(n) for n in client)
        if total:
            rows.append([int(n) / total for n in client])
    n_cls = len(counts[0])
    mu, sigma, gamma = [], [], []
    for c in range(n_cls):
        if rows:
            m = sum(r[c] for r in rows) / len(rows)
            s = math.sqrt(sum((r[c] - m) ** 2 for r in rows) / len(rows))
        else:
            m = s = 0.0
        mu.append(m)
        sigma.append(s)
        gamma.append(s / (m + eps) if m + eps > 0 else 0.0)
    return mu, sigma, gamma


def test_scores_match_scalar_loop(rng) -> None:
    """Random client counts, including empty clients and never-predicted classes."""
    for _ in range(500):
        k, c = int(rng.integers(1, 7)), int(rng.integers(2, 6))
        counts = rng.integers(0, 100 // c + 1, size=(k, c))
        counts[rng.uniform(size=k) < 0.2] = 0
        counts[:, rng.uniform(size=c) < 0.2] = 0
        eps = float(rng.choice([0.0, 1e-8, 0.1]))
        labels = [[label_map_with(row)] for row in counts]
        report = inconsistency_scores(class_proportions(labels, list(range(c))), eps=eps)
        mu, sigma, gamma = scalar_scores(counts, eps)
        np.testing.assert_allclose(report.mu, mu, rtol=0, atol=1e-12)
        np.testing.assert_allclose(report.sigma, sigma, rtol=0, atol=1e-12)
        np.testing.assert_allclose(report.gamma, gamma, rtol=0, atol=1e-12)


def test_threshold_is_strict() -> None:
    report = inconsistency_scores(matrix([[0.0, 1.0], [1.0, 0.0]]), eps=0.0)
    np.testing.assert_allclose(report.gamma, [1.0, 1.0])
    assert select_unstable(report, 1.0) == []
    assert select_unstable(report, 0.999) == [0, 1]


def test_unstable_class_detected() -> None:
    """A class one client never predicts scores above the default threshold."""
    report = inconsistency_scores(matrix([[0.0, 1.0], [0.0, 1.0], [0.0, 1.0], [0.6, 0.4]]))
    assert report.unstable == [0]


def test_scores_invariant_to_client_order(rng) -> None:
    rows = rng.dirichlet(np.ones(4), size=5)
    base = inconsistency_scores(matrix(rows, classes=range(4)))
    shuffled = inconsistency_scores(matrix(rows[rng.permutation(5)], classes=range(4)))
    np.testing.assert_allclose(base.gamma, shuffled.gamma)
    np.testing.assert_allclose(base.sigma, shuffled.sigma)
    assert base.unstable == shuffled.unstable


def test_scores_invariant_to_count_scaling() -> None:
    small = class_proportions([[label_map_with([2, 3])], [label_map_with([4, 1])]], [0, 1])
    large = class_proportions([[label_map_with([20, 30])], [label_map_with([40, 10])]], [0, 1])
    np.testing.assert_allclose(inconsistency_scores(small).gamma, inconsistency_scores(large).gamma)


def test_degenerate_client_excluded() -> None:
    """A client with no pixels in the scored classes does not enter the statistics."""
    labels = [[label_map_with([20, 80])], [label_map_with([40, 60])], [label_map_with([])]]
    p = class_proportions(labels, [0, 1], client_ids=["a", "b", "c"])
    assert p.degenerate.tolist() == [False, False, True]
    np.testing.assert_array_equal(p.values[2], [0.0, 0.0])
    report = inconsistency_scores(p, eps=0.0)
    assert report.excluded_clients == ["c"]
    np.testing.assert_allclose(report.gamma, [1 / 3, 1 / 7])


def test_bad_arguments() -> None:
    with pytest.raises(ContractError):
        class_proportions([[label_map_with([1])]], [])
    with pytest.raises(ContractError):
        inconsistency_scores(matrix([[0.5, 0.5]]), eps=-1.0)


def test_report_json_roundtrip(tmp_path) -> None:
    report = inconsistency_scores(matrix([[0.2, 0.8], [0.4, 0.6]]), eps=0.0, threshold=0.2)
    loaded = InconsistencyReport.read_json(report.write_json(tmp_path / "inconsistency.json"))
    assert loaded.unstable == report.unstable == [0]
    np.testing.assert_allclose(loaded.gamma, report.gamma)
    assert loaded.threshold == 0.2


def test_pseudo_labels_shape(tiny_cfg, tiny_spec) -> None:
    server = make_domain(tiny_spec, 3, seed=0, labeled=False)
    model = init_model(tiny_cfg, 0)
    labels = predict_pseudo_labels([model, model], server, workers=2)
    assert [len(maps) for maps in labels] == [3, 3]
    for a, b in zip(*labels):
        np.testing.assert_array_equal(a.ids, b.ids)
    empty = DomainDataset("none", [], labeled=False)
    assert predict_pseudo_labels([model], empty) == [[]]


def test_pseudo_labels_reject_class_mismatch(tiny_cfg, tiny_spec) -> None:
    server = make_domain(tiny_spec, 1, seed=0, labeled=False)
    other = init_model(replace(tiny_cfg, num_classes=5), 0)
    with pytest.raises(ContractError):
        predict_pseudo_labels([init_model(tiny_cfg, 0), other], server)


def test_identical_models_are_consistent(tiny_cfg, tiny_spec) -> None:
    server = make_domain(tiny_spec, 2, seed=0, labeled=False)
    model = init_model(tiny_cfg, 3)
    report = score_server_set([model, model, model], server, classes=[3, 4, 5])
    assert report.unstable == []
    np.testing.assert_allclose(report.gamma, 0.0, atol=1e-12)


def test_build_distill_set_sizes(tiny_spec) -> None:
    server = make_domain(tiny_spec, 5, seed=0, labeled=False)
    assert len(build_distill_set(server, {})) == 5
    extra = [np.zeros((3, 16, 16))] * 4
    pooled = build_distill_set(server, {5: extra, 3: extra[:2]})
    assert len(pooled) == 11
    assert not pooled.labeled
    np.testing.assert_array_equal(pooled.scenes[0].image, server.scenes[0].image)
    with pytest.raises(DimensionError):
        build_distill_set(server, {3: [np.zeros((3, 8, 8))]})
