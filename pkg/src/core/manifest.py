"""
Run manifest: per-stage status, artifact paths and checkpoint write counts.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from .exceptions import ConfigError, ContractError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "run_manifest.json"

STAGES = (
    "train_clients",
    "score_inconsistency",
    "augment",
    "distill",
    "baselines",
    "evaluate",
)

PENDING = "pending"
COMPLETED = "completed"
FAILED = "failed"


@dataclass
class StageRecord:
    status: str = PENDING
    seconds: float = 0.0
    error: Optional[str] = None


@dataclass
class RunManifest:
    config_hash: str
    data_ready: bool = False
    stages: Dict[str, StageRecord] = field(
        default_factory=lambda: {name: StageRecord() for name in STAGES}
    )
    artifacts: Dict[str, str] = field(default_factory=dict)
    write_counts: Dict[str, int] = field(default_factory=dict)

    def is_complete(self, stage: str) -> bool:
        return self.stages[stage].status == COMPLETED

    @property
    def completed_stages(self) -> List[str]:
        return [s for s in STAGES if self.is_complete(s)]

    def first_incomplete(self) -> Optional[str]:
        for stage in STAGES:
            if not self.is_complete(stage):
                return stage
        return None

    def require_before(self, stage: str) -> None:
        """Raise unless every stage ordered before ``stage`` is complete."""
        if not self.data_ready:
            raise ContractError(f"'{stage}' needs generated data; run gen-data first")
        for earlier in STAGES[: STAGES.index(stage)]:
            if not self.is_complete(earlier):
                raise ContractError(f"'{stage}' needs stage '{earlier}' to be complete")

    def mark_completed(self, stage: str, seconds: float) -> None:
        self.stages[stage] = StageRecord(COMPLETED, round(seconds, 3))

    def mark_failed(self, stage: str, seconds: float, error: str) -> None:
        self.stages[stage] = StageRecord(FAILED, round(seconds, 3), error)

    def record_artifact(self, key: str, path: Union[str, Path]) -> None:
        self.artifacts[key] = str(path)

    def record_write(self, key: str, path: Union[str, Path]) -> int:
        self.write_counts[key] = self.write_counts.get(key, 0) + 1
        self.record_artifact(key, path)
        return self.write_counts[key]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config_hash": self.config_hash,
            "data_ready": self.data_ready,
            "stages": {name: asdict(rec) for name, rec in self.stages.items()},
            "artifacts": dict(sorted(self.artifacts.items())),
            "write_counts": dict(sorted(self.write_counts.items())),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunManifest":
        stages = {name: StageRecord() for name in STAGES}
        for name, rec in data.get("stages", {}).items():
            if name in stages:
                stages[name] = StageRecord(**rec)
        return cls(
            config_hash=data["config_hash"],
            data_ready=bool(data.get("data_ready", False)),
            stages=stages,
            artifacts=dict(data.get("artifacts", {})),
            write_counts={k: int(v) for k, v in data.get("write_counts", {}).items()},
        )

    def save(self, run_dir: Union[str, Path]) -> Path:
        path = Path(run_dir) / MANIFEST_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, run_dir: Union[str, Path]) -> Optional["RunManifest"]:
        path = Path(run_dir) / MANIFEST_NAME
        if not path.exists():
            return None
        return cls.from_dict(json.loads(path.read_text()))

    @classmethod
    def open(cls, run_dir: Union[str, Path], config_hash: str) -> "RunManifest":
        """Existing manifest for this config, or a fresh one."""
        manifest = cls.load(run_dir)
        if manifest is None:
            return cls(config_hash)
        if manifest.config_hash != config_hash:
            raise ConfigError(
                f"{run_dir} holds a run of a different config "
                f"({manifest.config_hash[:12]} vs {config_hash[:12]})"
            )
        logger.info(f"Resuming run in {run_dir}: completed {manifest.completed_stages}")
        return manifest
