"""Segmentation metrics and report output."""

from .metrics import (
    ConfusionMatrix,
    DomainReport,
    EvaluationSummary,
    accumulate,
    average_miou,
    evaluate_model,
    evaluate_on_domains,
    iou,
    miou,
    report_from_confusion,
)
from .reports import (
    read_confusion,
    summary_to_dict,
    write_confusion,
    write_domain_report,
    write_evaluation,
    write_per_class,
    write_summary,
    write_summary_json,
)

__all__ = [
    "ConfusionMatrix",
    "DomainReport",
    "EvaluationSummary",
    "accumulate",
    "average_miou",
    "evaluate_model",
    "evaluate_on_domains",
    "iou",
    "miou",
    "read_confusion",
    "report_from_confusion",
    "summary_to_dict",
    "write_confusion",
    "write_domain_report",
    "write_evaluation",
    "write_per_class",
    "write_summary",
    "write_summary_json",
]
