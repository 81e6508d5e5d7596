"""
CSV and JSON report writers.

Floats are written at fixed precision so that two identical runs produce
identical files.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Mapping, Sequence, Union

import numpy as np

from ..utils.helpers import read_csv, write_csv
from .metrics import ConfusionMatrix, DomainReport, EvaluationSummary

PathLike = Union[str, Path]


def write_domain_report(report: DomainReport, path: PathLike) -> Path:
    """One row per class, then an ``mIoU`` footer row."""
    rows: List[List[Any]] = [
        [name, float(value)] for name, value in zip(report.class_names, report.ious)
    ]
    rows.append(["mIoU", float(report.miou)])
    return write_csv(path, ["class", "iou"], rows)


def write_confusion(cm: ConfusionMatrix, path: PathLike) -> Path:
    header = ["gt\\pred"] + [str(c) for c in range(cm.num_classes)]
    rows = [[str(g)] + [int(v) for v in cm.counts[g]] for g in range(cm.num_classes)]
    return write_csv(path, header, rows)


def read_confusion(path: PathLike) -> ConfusionMatrix:
    rows = read_csv(path)
    counts = np.array(
        [[int(row[str(c)]) for c in range(len(rows))] for row in rows], dtype=np.int64
    )
    return ConfusionMatrix(len(rows), counts)


def write_summary(results: Mapping[str, EvaluationSummary], path: PathLike) -> Path:
    """Methods as rows, target domains as columns, plus the cross-domain average."""
    domains: List[str] = []
    for summary in results.values():
        domains.extend(d for d in summary.domain_ids if d not in domains)
    rows = []
    for method, summary in results.items():
        by_domain = {r.domain_id: r.miou for r in summary.reports}
        values = [float(by_domain.get(d, float("nan"))) for d in domains]
        rows.append([method] + values + [float(summary.average_miou)])
    return write_csv(path, ["method"] + domains + ["average"], rows)


def write_per_class(results: Mapping[str, EvaluationSummary], path: PathLike) -> Path:
    """Per-class IoU of every method, averaged over target domains."""
    names: Sequence[str] = []
    rows = []
    for method, summary in results.items():
        if not summary.reports:
            continue
        names = summary.reports[0].class_names
        stacked = np.stack([r.ious for r in summary.reports])
        defined = ~np.isnan(stacked)
        sums = np.where(defined, stacked, 0.0).sum(axis=0)
        hits = defined.sum(axis=0)
        mean = np.divide(sums, hits, out=np.full(len(names), np.nan), where=hits > 0)
        rows.append([method] + [float(v) for v in mean] + [float(summary.average_miou)])
    return write_csv(path, ["method"] + list(names) + ["mIoU"], rows)


def summary_to_dict(results: Mapping[str, EvaluationSummary]) -> Dict[str, Any]:
    def clean(value: float) -> Any:
        return None if value != value else round(float(value), 6)

    return {
        method: {
            "average_miou": clean(summary.average_miou),
            "domains": {
                r.domain_id: {
                    "miou": clean(r.miou),
                    "num_images": r.num_images,
                    "iou": {n: clean(v) for n, v in zip(r.class_names, r.ious)},
                }
                for r in summary.reports
            },
        }
        for method, summary in results.items()
    }


def write_summary_json(results: Mapping[str, EvaluationSummary], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary_to_dict(results), indent=2, sort_keys=True))
    return path


def write_evaluation(
    method: str, summary: EvaluationSummary, reports_dir: PathLike
) -> List[Path]:
    """Per-domain IoU table and confusion matrix under ``reports_dir/<method>/``."""
    base = Path(reports_dir) / method
    written = []
    for report in summary.reports:
        written.append(write_domain_report(report, base / f"{report.domain_id}.csv"))
        confusion_path = base / f"{report.domain_id}_confusion.csv"
        written.append(write_confusion(report.confusion, confusion_path))
    return written
