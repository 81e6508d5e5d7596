"""
Experiment configuration loaded from a YAML file.

Layout::

    protocol:      seed, output_dir, centralized_upper_bound, fedavg_iterations, fedavg_weights
    model:         SegModelConfig fields
    train:         TrainConfig fields (client training and FedAvg fine-tuning)
    distill:       DistillConfig fields
    augmentation:  enabled, images_per_class, sweep_counts
    inconsistency: threshold, eps, classes
    evaluation:    exclude_absent
    domains:       clients (list), server, targets (list); each a DomainSpec plus ``size``
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import yaml

from ..core.exceptions import ConfigError
from ..federation.distill import DistillConfig
from ..models.segmodel import SegModelConfig
from ..scenes.domain import DomainSpec, default_dynamic_classes
from ..training.config import TrainConfig
from ..utils.helpers import config_hash

logger = logging.getLogger(__name__)

SECTIONS = (
    "protocol",
    "model",
    "train",
    "distill",
    "augmentation",
    "inconsistency",
    "evaluation",
    "domains",
)


def _check_keys(section: str, data: Mapping[str, Any], allowed: Sequence[str]) -> None:
    unknown = set(data) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")


@dataclass(frozen=True)
class DomainEntry:
    """A domain description and how many scenes to generate for it."""

    spec: DomainSpec
    size: int

    def to_dict(self) -> Dict[str, Any]:
        data = self.spec.to_dict()
        data["size"] = self.size
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DomainEntry":
        values = dict(data)
        if "size" not in values:
            raise ConfigError(f"domain '{values.get('domain_id')}' needs a size")
        size = int(values.pop("size"))
        if size < 1:
            raise ConfigError(f"domain '{values.get('domain_id')}' size must be >= 1")
        return cls(DomainSpec.from_dict(values), size)


@dataclass(frozen=True)
class ExperimentConfig:
    clients: List[DomainEntry]
    server: DomainEntry
    targets: List[DomainEntry]
    model: SegModelConfig = SegModelConfig()
    train: TrainConfig = TrainConfig()
    distill: DistillConfig = DistillConfig()
    seed: int = 42
    output_dir: str = "runs/default"
    centralized_upper_bound: bool = False
    fedavg_iterations: Optional[int] = None
    fedavg_weights: Optional[List[float]] = None
    augmentation_enabled: bool = True
    images_per_class: int = 100
    sweep_counts: List[int] = field(default_factory=lambda: [10, 100, 500, 1000])
    threshold: float = 1.0
    eps: float = 1e-8
    classes: Optional[List[int]] = None
    exclude_absent: bool = True

    @property
    def num_clients(self) -> int:
        return len(self.clients)

    @property
    def client_ids(self) -> List[str]:
        return [c.spec.domain_id for c in self.clients]

    @property
    def target_ids(self) -> List[str]:
        return [t.spec.domain_id for t in self.targets]

    @property
    def scored_classes(self) -> List[int]:
        """Classes the inconsistency score is computed over."""
        if self.classes is not None:
            return list(self.classes)
        return default_dynamic_classes(self.model.num_classes)

    @property
    def global_model(self) -> SegModelConfig:
        return self.model.with_queries(self.num_clients * self.model.num_queries)

    @property
    def fedavg_train(self) -> TrainConfig:
        """Fine-tuning budget; defaults to the distillation iteration count."""
        iterations = self.fedavg_iterations
        if iterations is None:
            iterations = self.distill.iterations
        return replace(self.train, iterations=iterations)

    def validate(self) -> None:
        if not self.clients:
            raise ConfigError("need at least one client domain")
        if not self.targets:
            raise ConfigError("need at least one target domain")
        self.model.validate()
        self.train.validate()
        self.distill.validate()

        ids = self.client_ids + [self.server.spec.domain_id] + self.target_ids
        duplicates = sorted({i for i in ids if ids.count(i) > 1})
        if duplicates:
            raise ConfigError(
                f"client, server and target domain ids must be distinct: {duplicates}"
            )

        for entry in self.clients + [self.server] + self.targets:
            spec = entry.spec
            spec.validate()
            if spec.num_classes != self.model.num_classes:
                raise ConfigError(
                    f"domain '{spec.domain_id}' has {spec.num_classes} classes, "
                    f"model has {self.model.num_classes}"
                )
            if (spec.height, spec.width) != (self.model.height, self.model.width):
                raise ConfigError(
                    f"domain '{spec.domain_id}' renders {spec.height}x{spec.width}, "
                    f"model expects {self.model.height}x{self.model.width}"
                )

        if self.eps < 0:
            raise ConfigError("inconsistency eps must be >= 0")
        if self.images_per_class < 0 or any(n < 0 for n in self.sweep_counts):
            raise ConfigError("augmentation counts must be >= 0")
        bad = [c for c in self.scored_classes if not 0 <= c < self.model.num_classes]
        if bad or not self.scored_classes:
            raise ConfigError(f"inconsistency classes must be a nonempty subset of ids: {bad}")
        if self.fedavg_iterations is not None and self.fedavg_iterations < 0:
            raise ConfigError("fedavg_iterations must be >= 0")
        if self.fedavg_weights is not None and len(self.fedavg_weights) != self.num_clients:
            raise ConfigError("fedavg_weights needs one weight per client")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "protocol": {
                "seed": self.seed,
                "output_dir": self.output_dir,
                "centralized_upper_bound": self.centralized_upper_bound,
                "fedavg_iterations": self.fedavg_iterations,
                "fedavg_weights": self.fedavg_weights,
            },
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "distill": self.distill.to_dict(),
            "augmentation": {
                "enabled": self.augmentation_enabled,
                "images_per_class": self.images_per_class,
                "sweep_counts": list(self.sweep_counts),
            },
            "inconsistency": {
                "threshold": self.threshold,
                "eps": self.eps,
                "classes": self.classes,
            },
            "evaluation": {"exclude_absent": self.exclude_absent},
            "domains": {
                "clients": [c.to_dict() for c in self.clients],
                "server": self.server.to_dict(),
                "targets": [t.to_dict() for t in self.targets],
            },
        }

    def hash(self) -> str:
        """Hash of everything that shapes results; ``output_dir`` is excluded."""
        data = self.to_dict()
        data["protocol"] = {k: v for k, v in data["protocol"].items() if k != "output_dir"}
        return config_hash(data)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ExperimentConfig":
        _check_keys("top level", data, SECTIONS)
        protocol = dict(data.get("protocol") or {})
        _check_keys(
            "protocol",
            protocol,
            [
                "seed",
                "output_dir",
                "centralized_upper_bound",
                "fedavg_iterations",
                "fedavg_weights",
            ],
        )
        augmentation = dict(data.get("augmentation") or {})
        _check_keys("augmentation", augmentation, ["enabled", "images_per_class", "sweep_counts"])
        inconsistency = dict(data.get("inconsistency") or {})
        _check_keys("inconsistency", inconsistency, ["threshold", "eps", "classes"])
        evaluation = dict(data.get("evaluation") or {})
        _check_keys("evaluation", evaluation, ["exclude_absent"])
        domains = dict(data.get("domains") or {})
        _check_keys("domains", domains, ["clients", "server", "targets"])
        if "server" not in domains:
            raise ConfigError("domains.server is required")

        defaults = cls.__dataclass_fields__
        fedavg_weights = protocol.get("fedavg_weights")
        classes = inconsistency.get("classes")
        config = cls(
            clients=[DomainEntry.from_dict(d) for d in domains.get("clients") or []],
            server=DomainEntry.from_dict(domains["server"]),
            targets=[DomainEntry.from_dict(d) for d in domains.get("targets") or []],
            model=SegModelConfig.from_dict(data.get("model") or {}),
            train=TrainConfig.from_dict(data.get("train") or {}),
            distill=DistillConfig.from_dict(data.get("distill") or {}),
            seed=int(protocol.get("seed", defaults["seed"].default)),
            output_dir=str(protocol.get("output_dir", defaults["output_dir"].default)),
            centralized_upper_bound=bool(protocol.get("centralized_upper_bound", False)),
            fedavg_iterations=protocol.get("fedavg_iterations"),
            fedavg_weights=[float(w) for w in fedavg_weights] if fedavg_weights else None,
            augmentation_enabled=bool(augmentation.get("enabled", True)),
            images_per_class=int(augmentation.get("images_per_class", 100)),
            sweep_counts=[int(n) for n in augmentation.get("sweep_counts", [10, 100, 500, 1000])],
            threshold=float(inconsistency.get("threshold", 1.0)),
            eps=float(inconsistency.get("eps", 1e-8)),
            classes=[int(c) for c in classes] if classes is not None else None,
            exclude_absent=bool(evaluation.get("exclude_absent", True)),
        )
        config.validate()
        return config

    @classmethod
    def from_yaml(cls, path: Union[str, Path]) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text())
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"{path} must hold a mapping")
        logger.debug(f"Loaded experiment config from {path}")
        return cls.from_dict(data)

    def to_yaml(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
        return path

    def with_overrides(
        self, seed: Optional[int] = None, output_dir: Optional[str] = None
    ) -> "ExperimentConfig":
        """Apply ``--seed`` / ``--out`` style overrides."""
        changes: Dict[str, Any] = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if output_dir is not None:
            changes["output_dir"] = str(output_dir)
        return replace(self, **changes) if changes else self


def rotate_roles(config: ExperimentConfig, server_index: int) -> ExperimentConfig:
    """Make source domain ``server_index`` the server; the other sources become clients.

    Sources are the clients in order followed by the current server.
    """
    sources = list(config.clients) + [config.server]
    if not 0 <= server_index < len(sources):
        raise ConfigError(f"server_index must be in [0, {len(sources) - 1}]")
    server = sources[server_index]
    clients = [s for i, s in enumerate(sources) if i != server_index]
    rotated = replace(config, clients=clients, server=server)
    rotated.validate()
    return rotated
