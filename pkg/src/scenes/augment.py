"""
Class-conditioned image generation for unstable classes.

``AugmentationGenerator`` is the interface an image synthesiser must
follow; ``ProceduralAugmenter`` implements it with the scene renderer. The
(class -> generator parameters) mapping in ``ClassPrompt`` plays the role a
text prompt would play for a generative model.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..core.exceptions import ContractError
from ..models.inference import LabelMap
from .domain import DomainSpec, Scene
from .generator import render_scene, scene_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassPrompt:
    """Generator parameters for one requested class."""

    class_id: int
    class_name: str
    spec: DomainSpec


class AugmentationGenerator(ABC):
    """Abstract source of unlabeled images showing a requested class."""

    def __init__(self, name: str):
        self.name = name
        self.last_error: Optional[str] = None

    @abstractmethod
    def prompt_for(self, class_id: int) -> ClassPrompt:
        """Map a class id to generation parameters."""
        pass

    @abstractmethod
    def generate(self, class_id: int, count: int, seed: int) -> List[Scene]:
        """Produce ``count`` unlabeled scenes featuring ``class_id``."""
        pass

    def get_last_error(self) -> Optional[str]:
        return self.last_error


class ProceduralAugmenter(AugmentationGenerator):
    """Renders scenes with one large object of the requested class drawn on top.

    The label layouts are kept for diagnostics only; ``generate`` never
    returns them.
    """

    def __init__(self, spec: DomainSpec, class_names: Optional[List[str]] = None):
        super().__init__(f"procedural:{spec.domain_id}")
        spec.validate()
        self.spec = spec
        self.class_names = class_names or [str(i) for i in range(spec.num_classes)]
        self._hidden: Dict[Tuple[int, int], List[LabelMap]] = {}

    def prompt_for(self, class_id: int) -> ClassPrompt:
        if not 0 <= class_id < self.spec.num_classes:
            self.last_error = f"class {class_id} outside [0, {self.spec.num_classes - 1}]"
            raise ContractError(self.last_error)
        return ClassPrompt(class_id, self.class_names[class_id], self.spec)

    def generate(self, class_id: int, count: int, seed: int) -> List[Scene]:
        scenes, labels = self.generate_with_truth(class_id, count, seed)
        self._hidden[(class_id, seed)] = labels
        return scenes

    def generate_with_truth(
        self, class_id: int, count: int, seed: int
    ) -> Tuple[List[Scene], List[LabelMap]]:
        prompt = self.prompt_for(class_id)
        scenes: List[Scene] = []
        labels: List[LabelMap] = []
        for i in range(count):
            image, layout = render_scene(
                prompt.spec, scene_rng(seed, class_id, i), focus_class=class_id
            )
            scenes.append(Scene(image))
            labels.append(layout)
        if count:
            logger.info(f"Generated {count} images for class '{prompt.class_name}'")
        return scenes, labels

    def hidden_labels(self, class_id: int, seed: int) -> List[LabelMap]:
        """Layouts behind an earlier ``generate`` call, for diagnostics."""
        return self._hidden.get((class_id, seed), [])


def augment_for_class(
    class_id: int, count: int, spec: DomainSpec, seed: int
) -> List[np.ndarray]:
    """Unlabeled images in which ``class_id`` covers a large share of the frame."""
    return [s.image for s in ProceduralAugmenter(spec).generate(class_id, count, seed)]


def augment_for_class_with_truth(
    class_id: int, count: int, spec: DomainSpec, seed: int
) -> Tuple[List[np.ndarray], List[LabelMap]]:
    """As ``augment_for_class`` but also returns the hidden layouts (tests, diagnostics)."""
    scenes, labels = ProceduralAugmenter(spec).generate_with_truth(class_id, count, seed)
    return [s.image for s in scenes], labels
