"""One-shot federation: inconsistency scoring, distillation and baselines."""

from .baselines import fedavg_aggregate, fedavg_finetune, pool_datasets, train_centralized
from .distill import (
    DistillConfig,
    DistillResult,
    DistillStep,
    GlobalDistiller,
    TeacherBundle,
    distill_global,
    distill_global_with_history,
    fuse_features,
    kl_cls_loss,
    mask_distill_loss,
    mask_distill_terms,
    teacher_logits,
    write_curve_csv,
)
from .inconsistency import (
    ClassProportionMatrix,
    InconsistencyReport,
    build_distill_set,
    class_proportions,
    inconsistency_scores,
    predict_pseudo_labels,
    score_server_set,
    select_unstable,
)

__all__ = [
    "ClassProportionMatrix",
    "DistillConfig",
    "DistillResult",
    "DistillStep",
    "GlobalDistiller",
    "InconsistencyReport",
    "TeacherBundle",
    "build_distill_set",
    "class_proportions",
    "distill_global",
    "distill_global_with_history",
    "fedavg_aggregate",
    "fedavg_finetune",
    "fuse_features",
    "inconsistency_scores",
    "kl_cls_loss",
    "mask_distill_loss",
    "mask_distill_terms",
    "pool_datasets",
    "predict_pseudo_labels",
    "score_server_set",
    "select_unstable",
    "teacher_logits",
    "train_centralized",
    "write_curve_csv",
]
