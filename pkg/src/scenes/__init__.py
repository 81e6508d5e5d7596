"""Procedural multi-domain scenes and class-conditioned augmentation."""

from .augment import (
    AugmentationGenerator,
    ClassPrompt,
    ProceduralAugmenter,
    augment_for_class,
    augment_for_class_with_truth,
)
from .domain import (
    CLASS_CATALOG,
    DomainDataset,
    DomainSpec,
    Scene,
    default_class_names,
    default_dynamic_classes,
)
from .generator import make_domain, render_scene
from .storage import load_dataset, read_dataset_manifest, save_dataset

__all__ = [
    "AugmentationGenerator",
    "CLASS_CATALOG",
    "ClassPrompt",
    "DomainDataset",
    "DomainSpec",
    "ProceduralAugmenter",
    "Scene",
    "augment_for_class",
    "augment_for_class_with_truth",
    "default_class_names",
    "default_dynamic_classes",
    "load_dataset",
    "make_domain",
    "read_dataset_manifest",
    "render_scene",
    "save_dataset",
]
