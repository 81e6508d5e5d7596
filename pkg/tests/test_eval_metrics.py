import math

import numpy as np
import pytest

from src.core.exceptions import ContractError, DimensionError
from src.evaluation import (
    ConfusionMatrix,
    EvaluationSummary,
    accumulate,
    average_miou,
    evaluate_model,
    evaluate_on_domains,
    iou,
    miou,
    read_confusion,
    report_from_confusion,
    summary_to_dict,
    write_evaluation,
    write_summary,
)
from src.models import init_model
from src.models.inference import IGNORE_INDEX, LabelMap
from src.scenes import make_domain
from src.utils import read_csv


def lm(rows) -> LabelMap:
    return LabelMap(np.array(rows, dtype=np.uint8))


def test_perfect_prediction_scores_one() -> None:
    gt = lm([[0, 1], [2, 2]])
    cm = accumulate(ConfusionMatrix(3), gt, gt)
    np.testing.assert_array_equal(np.diag(cm.counts), [1, 1, 2])
    np.testing.assert_array_equal(iou(cm), [1.0, 1.0, 1.0])
    assert miou(cm) == 1.0


def test_hand_example() -> None:
    """TP, FP and FN counted per class."""
    gt = lm([[0, 0], [1, 1]])
    pred = lm([[0, 1], [1, 1]])
    cm = accumulate(ConfusionMatrix(2), pred, gt)
    np.testing.assert_allclose(iou(cm), [0.5, 2 / 3])
    assert miou(cm) == pytest.approx((0.5 + 2 / 3) / 2)


def test_ignore_pixels_skipped() -> None:
    gt = lm([[0, IGNORE_INDEX], [IGNORE_INDEX, 1]])
    pred = lm([[0, 1], [0, 1]])
    cm = accumulate(ConfusionMatrix(2), pred, gt)
    assert cm.total == 2
    np.testing.assert_array_equal(iou(cm), [1.0, 1.0])


def test_absent_classes() -> None:
    """Classes in neither map are left out of the mean unless counted as zero."""
    gt = lm([[0, 0], [1, 1]])
    cm = accumulate(ConfusionMatrix(3), gt, gt)
    assert math.isnan(iou(cm)[2])
    assert miou(cm) == 1.0
    assert iou(cm, exclude_absent=False)[2] == 0.0
    assert miou(cm, exclude_absent=False) == pytest.approx(2 / 3)
    assert math.isnan(miou(ConfusionMatrix(3)))


def test_iou_matches_brute_force(rng) -> None:
    for _ in range(100):
        c = int(rng.integers(2, 6))
        shape = (int(rng.integers(1, 6)), int(rng.integers(1, 6)))
        gt_ids = rng.integers(0, c, size=shape)
        gt_ids[rng.uniform(size=shape) < 0.1] = IGNORE_INDEX
        pred_ids = rng.integers(0, c, size=shape)
        cm = accumulate(ConfusionMatrix(c), LabelMap(pred_ids), LabelMap(gt_ids))
        got = iou(cm)
        for k in range(c):
            tp = fp = fn = 0
            for g, p in zip(gt_ids.ravel(), pred_ids.ravel()):
                if g == IGNORE_INDEX:
                    continue
                tp += g == k and p == k
                fp += g != k and p == k
                fn += g == k and p != k
            if tp + fp + fn == 0:
                assert math.isnan(got[k])
            else:
                assert got[k] == pytest.approx(tp / (tp + fp + fn))


def test_accumulate_is_additive() -> None:
    a, b = lm([[0, 1]]), lm([[1, 1]])
    first = accumulate(ConfusionMatrix(2), a, b)
    both = accumulate(first, b, a)
    summed = first + accumulate(ConfusionMatrix(2), b, a)
    np.testing.assert_array_equal(summed.counts, both.counts)
    np.testing.assert_array_equal(ConfusionMatrix(2).counts, np.zeros((2, 2)))


def test_metric_errors() -> None:
    with pytest.raises(DimensionError):
        accumulate(ConfusionMatrix(2), lm([[0, 1]]), lm([[0], [1]]))
    with pytest.raises(ContractError):
        accumulate(ConfusionMatrix(2), lm([[0, 3]]), lm([[0, 1]]))
    with pytest.raises(DimensionError):
        ConfusionMatrix(2) + ConfusionMatrix(3)


def test_average_is_unweighted() -> None:
    cm = ConfusionMatrix(2, np.array([[1, 0], [0, 1]]))
    half = ConfusionMatrix(2, np.array([[1, 1], [0, 0]]))
    reports = [report_from_confusion("x", cm, 1), report_from_confusion("y", half, 50)]
    assert average_miou(reports) == pytest.approx((1.0 + 0.25) / 2)
    assert math.isnan(average_miou([]))


def test_evaluate_model_serial_equals_parallel(tiny_cfg, tiny_spec) -> None:
    data = make_domain(tiny_spec, 3, seed=2)
    model = init_model(tiny_cfg, 0)
    serial = evaluate_model(model, data)
    parallel = evaluate_model(model, data, workers=3)
    np.testing.assert_array_equal(serial.confusion.counts, parallel.confusion.counts)
    assert serial.confusion.total == 3 * 16 * 16
    with pytest.raises(ContractError):
        evaluate_model(model, make_domain(tiny_spec, 1, seed=2, labeled=False))


def test_reports_recompute_from_confusion(tiny_cfg, tiny_spec, tmp_path) -> None:
    """The written confusion matrix reproduces the written IoU table."""
    targets = [make_domain(tiny_spec, 2, seed=s) for s in (3, 4)]
    targets[1].domain_id = "other"
    summary = evaluate_on_domains(init_model(tiny_cfg, 0), targets)
    written = write_evaluation("global", summary, tmp_path)
    assert len(written) == 4
    report = summary.reports[0]
    cm = read_confusion(tmp_path / "global" / f"{report.domain_id}_confusion.csv")
    np.testing.assert_array_equal(cm.counts, report.confusion.counts)
    rows = read_csv(tmp_path / "global" / f"{report.domain_id}.csv")
    assert rows[-1]["class"] == "mIoU"
    for row, value in zip(rows[:-1], iou(cm)):
        if math.isnan(value):
            assert row["iou"] == "nan"
        else:
            assert float(row["iou"]) == pytest.approx(value, abs=1e-6)


def test_summary_table(tmp_path) -> None:
    cm = ConfusionMatrix(2, np.array([[1, 0], [0, 1]]))
    results = {
        "global": EvaluationSummary([report_from_confusion("t", cm, 1)], 1.0),
        "fedavg": EvaluationSummary([report_from_confusion("t", cm, 1)], 1.0),
    }
    rows = read_csv(write_summary(results, tmp_path / "summary.csv"))
    assert [r["method"] for r in rows] == ["global", "fedavg"]
    assert rows[0]["t"] == "1.000000" and rows[0]["average"] == "1.000000"
    assert summary_to_dict(results)["global"]["domains"]["t"]["miou"] == 1.0
