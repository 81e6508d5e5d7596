"""
Domain descriptions and dataset containers for procedurally generated scenes.
"""

from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import ConfigError, ContractError
from ..models.inference import LabelMap

# Background stripes first, then dynamic objects, then the remaining static classes.
CLASS_CATALOG: Tuple[str, ...] = (
    "road",
    "sky",
    "vegetation",
    "person",
    "car",
    "train",
    "truck",
    "bus",
    "rider",
    "bicycle",
    "motorcycle",
    "building",
    "sidewalk",
    "terrain",
    "wall",
    "fence",
    "pole",
    "traffic light",
    "traffic sign",
)

DYNAMIC_CLASS_NAMES = frozenset(
    {"person", "rider", "car", "truck", "bus", "train", "motorcycle", "bicycle"}
)

BACKGROUND_CLASSES: Tuple[int, int, int] = (0, 1, 2)

_BASE_COLORS: Tuple[Tuple[float, float, float], ...] = (
    (0.45, 0.45, 0.48),  # road
    (0.55, 0.75, 0.92),  # sky
    (0.20, 0.55, 0.20),  # vegetation
    (0.85, 0.25, 0.25),  # person
    (0.20, 0.25, 0.75),  # car
    (0.90, 0.75, 0.15),  # train
)


def default_class_names(num_classes: int) -> List[str]:
    names = list(CLASS_CATALOG[:num_classes])
    names += [f"class_{i}" for i in range(len(names), num_classes)]
    return names


def default_dynamic_classes(num_classes: int) -> List[int]:
    """Ids of the dynamic foreground classes present among the first ``num_classes``."""
    return [i for i, n in enumerate(default_class_names(num_classes)) if n in DYNAMIC_CLASS_NAMES]


def default_palette(num_classes: int) -> List[Tuple[float, float, float]]:
    colors = list(_BASE_COLORS[:num_classes])
    rng = np.random.default_rng(20240611)
    while len(colors) < num_classes:
        colors.append(tuple(float(v) for v in rng.uniform(0.15, 0.85, size=3)))  # type: ignore
    return colors


def _plain(value: Any) -> Any:
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    return value


@dataclass(frozen=True)
class DomainSpec:
    """Appearance, layout and class prior of one synthetic domain."""

    domain_id: str
    num_classes: int = 6
    class_frequencies: Tuple[float, ...] = ()
    class_colors: Tuple[Tuple[float, float, float], ...] = ()
    class_noise: Tuple[float, ...] = ()
    background_classes: Tuple[int, int, int] = BACKGROUND_CLASSES
    horizon_range: Tuple[float, float] = (0.35, 0.55)
    vegetation_band: Tuple[float, float] = (0.05, 0.15)
    blob_count_range: Tuple[int, int] = (2, 5)
    blob_size_range: Tuple[float, float] = (0.15, 0.35)
    color_offset: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    contrast: float = 1.0
    height: int = 32
    width: int = 32
    is_target: bool = False

    def __post_init__(self) -> None:
        c = self.num_classes
        if not self.class_frequencies:
            dyn = (
                default_dynamic_classes(c)
                or list(range(len(self.background_classes), c))
                or list(range(c))
            )
            prior = [1.0 / len(dyn) if i in dyn else 0.0 for i in range(c)]
            object.__setattr__(self, "class_frequencies", tuple(prior))
        if not self.class_colors:
            object.__setattr__(self, "class_colors", tuple(default_palette(c)))
        if not self.class_noise:
            object.__setattr__(self, "class_noise", tuple([0.04] * c))

    @property
    def prior(self) -> np.ndarray:
        return np.asarray(self.class_frequencies, dtype=np.float64)

    def validate(self) -> None:
        """Raise ConfigError on an unusable spec."""
        c = self.num_classes
        if c < 2:
            raise ConfigError(f"{self.domain_id}: need at least 2 classes")
        if len(self.class_frequencies) != c or len(self.class_colors) != c:
            raise ConfigError(f"{self.domain_id}: per-class tables must have {c} entries")
        if len(self.class_noise) != c:
            raise ConfigError(f"{self.domain_id}: class_noise must have {c} entries")
        prior = self.prior
        if np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-9:
            raise ConfigError(f"{self.domain_id}: class_frequencies must be >= 0 and sum to 1")
        if any(not 0 <= b < c for b in self.background_classes):
            raise ConfigError(f"{self.domain_id}: background class out of range")
        lo, hi = self.blob_count_range
        if lo < 0 or hi < lo:
            raise ConfigError(f"{self.domain_id}: bad blob_count_range {self.blob_count_range}")
        if self.contrast <= 0:
            raise ConfigError(f"{self.domain_id}: contrast must be positive")

    def with_frequencies(self, frequencies: Sequence[float]) -> "DomainSpec":
        return replace(self, class_frequencies=tuple(float(f) for f in frequencies))

    def to_dict(self) -> Dict[str, Any]:
        """Plain lists and scalars, ready for JSON or YAML."""
        return {key: _plain(value) for key, value in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DomainSpec":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown domain keys: {sorted(unknown)}")
        values = dict(data)
        for key in (
            "class_frequencies",
            "class_noise",
            "background_classes",
            "horizon_range",
            "vegetation_band",
            "blob_count_range",
            "blob_size_range",
            "color_offset",
        ):
            if key in values:
                values[key] = tuple(values[key])
        if "class_colors" in values:
            values["class_colors"] = tuple(tuple(c) for c in values["class_colors"])
        return cls(**values)


@dataclass
class Scene:
    """One ``3 x H x W`` image in [0, 1], optionally with its label map."""

    image: np.ndarray
    labels: Optional[LabelMap] = None

    @property
    def shape(self) -> Tuple[int, int]:
        return (int(self.image.shape[1]), int(self.image.shape[2]))


@dataclass
class DomainDataset:
    """Ordered scenes of one domain."""

    domain_id: str
    scenes: List[Scene] = field(default_factory=list)
    labeled: bool = True

    def __post_init__(self) -> None:
        if self.labeled and any(s.labels is None for s in self.scenes):
            raise ContractError(f"{self.domain_id}: labeled dataset has scenes without labels")
        if not self.labeled and any(s.labels is not None for s in self.scenes):
            raise ContractError(f"{self.domain_id}: unlabeled dataset carries labels")

    def __len__(self) -> int:
        return len(self.scenes)

    @property
    def images(self) -> List[np.ndarray]:
        return [s.image for s in self.scenes]

    def require_labels(self, purpose: str) -> None:
        if not self.labeled:
            raise ContractError(f"{purpose} needs a labeled dataset, '{self.domain_id}' is not")

    def without_labels(self) -> "DomainDataset":
        """Same images, labels dropped."""
        return DomainDataset(self.domain_id, [Scene(s.image) for s in self.scenes], labeled=False)
