"""
One-shot federated experiment runner.

Every stage reads its inputs from and writes its outputs to the run
directory, so a run can stop after any stage and resume later. Client
checkpoints are the only objects that cross from clients to the server.

Run directory layout::

    data/clients/<id>/  data/server/  data/server_labeled/  data/targets/<id>/
    data/augmented/class_<c>/
    checkpoints/client_<k>.ckpt  global.ckpt  fedavg.ckpt  [centralized.ckpt]
    reports/...
    run_manifest.json
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from ..config.experiment import ExperimentConfig
from ..config.settings import RuntimeSettings, get_settings
from ..evaluation.metrics import EvaluationSummary, evaluate_on_domains
from ..evaluation.reports import (
    write_evaluation,
    write_per_class,
    write_summary,
    write_summary_json,
)
from ..federation.baselines import fedavg_aggregate, fedavg_finetune, train_centralized
from ..federation.distill import DistillConfig, distill_global_with_history, write_curve_csv
from ..federation.inconsistency import InconsistencyReport, build_distill_set, score_server_set
from ..models.checkpoint import read_checkpoint, write_checkpoint
from ..models.segmodel import SegModel
from ..scenes.augment import augment_for_class
from ..scenes.domain import DomainDataset, Scene, default_class_names
from ..scenes.generator import make_domain
from ..scenes.storage import load_dataset, save_dataset
from ..training.trainer import train_client
from ..utils.helpers import derive_seed, write_csv
from .exceptions import ContractError, StageError
from .manifest import STAGES, RunManifest

logger = logging.getLogger(__name__)

ABLATION_AXES = ("fusion", "augmentation", "bce", "dice")


@dataclass(frozen=True)
class AblationRow:
    name: str
    fusion: bool
    augmentation: bool
    bce: bool
    dice: bool


def ablation_rows(axes: Sequence[str]) -> List[AblationRow]:
    """Rows of the component ablation for the requested axes.

    No axes gives only the full configuration; all four give six rows.
    """
    unknown = set(axes) - set(ABLATION_AXES)
    if unknown:
        raise ContractError(f"unknown ablation axes {sorted(unknown)}; use {ABLATION_AXES}")
    full = AblationRow("full", True, True, True, True)
    if not axes:
        return [full]
    rows = []
    if "dice" in axes:
        rows.append(AblationRow("KL+BCE", False, False, True, False))
    if "bce" in axes:
        rows.append(AblationRow("KL+Dice", False, False, False, True))
    rows.append(AblationRow("KL+BCE+Dice", False, False, True, True))
    if "fusion" in axes:
        rows.append(AblationRow("+fusion", True, False, True, True))
    if "augmentation" in axes:
        rows.append(AblationRow("+augmentation", False, True, True, True))
    rows.append(full)
    return rows


class ExperimentRunner:
    """Runs the protocol stages of one experiment inside its output directory."""

    def __init__(self, config: ExperimentConfig, runtime: Optional[RuntimeSettings] = None):
        config.validate()
        self.config = config
        self.runtime = runtime or get_settings().runtime
        self.run_dir = Path(config.output_dir)
        self.manifest = RunManifest.open(self.run_dir, config.hash())
        self.class_names = default_class_names(config.model.num_classes)
        self.stage_handlers: Dict[str, Callable[[], None]] = {
            "train_clients": self.train_clients,
            "score_inconsistency": self.score_inconsistency,
            "augment": self.augment,
            "distill": self.distill,
            "baselines": self.baselines,
            "evaluate": self.evaluate,
        }

    # Paths

    @property
    def data_dir(self) -> Path:
        """Generated datasets: clients, server, labeled server copy, targets, augmentations."""
        return self.run_dir / "data"

    @property
    def checkpoint_dir(self) -> Path:
        """Uploaded client weights and the trained global and baseline models."""
        return self.run_dir / "checkpoints"

    @property
    def reports_dir(self) -> Path:
        """CSV and JSON reports of every stage and study."""
        return self.run_dir / "reports"

    def client_data(self, k: int) -> Path:
        """Private dataset of client ``k``."""
        return self.data_dir / "clients" / self.config.client_ids[k]

    def target_data(self, domain_id: str) -> Path:
        """Held-out evaluation domain."""
        return self.data_dir / "targets" / domain_id

    def augmented_data(self, class_id: int) -> Path:
        """Generated unlabeled images for one unstable class."""
        return self.data_dir / "augmented" / f"class_{class_id}"

    def client_checkpoint(self, k: int) -> Path:
        """Weights uploaded by client ``k``."""
        return self.checkpoint_dir / f"client_{k}.ckpt"

    def seed_for(self, name: str) -> int:
        """Seed of a named stage, derived from the master seed."""
        return derive_seed(self.config.seed, name)

    def save(self) -> None:
        """Persist the run manifest."""
        self.manifest.save(self.run_dir)

    # Data

    def generate_data(self) -> None:
        """Render every domain once; the server set is written without label files."""
        if self.manifest.data_ready:
            logger.info("Data already generated")
            return
        cfg = self.config
        for k, entry in enumerate(cfg.clients):
            seed = self.seed_for(f"gen_data/{entry.spec.domain_id}")
            dataset = make_domain(entry.spec, entry.size, seed, workers=self.runtime.client_workers)
            save_dataset(dataset, self.client_data(k), cfg.model.num_classes)

        server_seed = self.seed_for(f"gen_data/{cfg.server.spec.domain_id}")
        server = make_domain(cfg.server.spec, cfg.server.size, server_seed)
        save_dataset(server.without_labels(), self.data_dir / "server", cfg.model.num_classes)
        save_dataset(server, self.data_dir / "server_labeled", cfg.model.num_classes)

        for entry in cfg.targets:
            seed = self.seed_for(f"gen_data/{entry.spec.domain_id}")
            target = make_domain(entry.spec, entry.size, seed)
            save_dataset(target, self.target_data(entry.spec.domain_id), cfg.model.num_classes)

        self.manifest.data_ready = True
        self.manifest.record_artifact("data", self.data_dir)
        self.save()
        logger.info(
            f"Generated {cfg.num_clients} client, 1 server and {len(cfg.targets)} target domains"
        )

    def server_set(self) -> DomainDataset:
        return load_dataset(self.data_dir / "server", with_labels=False)

    def load_clients(self) -> List[SegModel]:
        return [read_checkpoint(self.client_checkpoint(k)) for k in range(self.config.num_clients)]

    def _write_model(self, key: str, model: SegModel, path: Path) -> None:
        write_checkpoint(model, path)
        self.manifest.record_write(key, path)

    # Stages

    def train_clients(self, only: Optional[int] = None) -> None:
        """Train each client once and upload its checkpoint; uploaded clients are skipped."""
        cfg = self.config
        todo = [
            k
            for k in range(cfg.num_clients)
            if (only is None or k == only) and self.manifest.write_counts.get(f"client_{k}", 0) == 0
        ]

        def run(k: int) -> SegModel:
            dataset = load_dataset(self.client_data(k))
            return train_client(dataset, cfg.model, cfg.train, self.seed_for(f"train_client/{k}"))

        def upload(k: int, model: SegModel) -> None:
            self._write_model(f"client_{k}", model, self.client_checkpoint(k))
            self.save()

        if self.runtime.client_workers > 1 and len(todo) > 1:
            with ThreadPoolExecutor(max_workers=self.runtime.client_workers) as pool:
                for k, model in zip(todo, pool.map(run, todo)):
                    upload(k, model)
        else:
            for k in todo:
                upload(k, run(k))
        if only is None and not self.clients_uploaded():
            raise ContractError("some client checkpoints are missing after training")

    def clients_uploaded(self) -> bool:
        return all(
            self.manifest.write_counts.get(f"client_{k}", 0) >= 1
            for k in range(self.config.num_clients)
        )

    def score_inconsistency(self) -> None:
        cfg = self.config
        report = score_server_set(
            self.load_clients(),
            self.server_set(),
            cfg.scored_classes,
            eps=cfg.eps,
            threshold=cfg.threshold,
            client_ids=cfg.client_ids,
            workers=self.runtime.eval_workers,
        )
        path = report.write_json(self.reports_dir / "inconsistency.json")
        self.manifest.record_artifact("inconsistency", path)

    def inconsistency_report(self) -> InconsistencyReport:
        return InconsistencyReport.read_json(self.reports_dir / "inconsistency.json")

    def generate_augmentations(
        self, classes: Sequence[int], count: int
    ) -> Dict[int, List[np.ndarray]]:
        spec = replace(self.config.server.spec, domain_id="generated")
        return {
            c: augment_for_class(c, count, spec, self.seed_for(f"augment/{c}")) for c in classes
        }

    def augment(self) -> None:
        cfg = self.config
        unstable = self.inconsistency_report().unstable
        if not cfg.augmentation_enabled or not unstable or cfg.images_per_class == 0:
            logger.info(
                f"No augmentation (enabled: {cfg.augmentation_enabled}, unstable: {unstable})"
            )
            return
        for class_id, images in self.generate_augmentations(unstable, cfg.images_per_class).items():
            scenes = [Scene(x) for x in images]
            dataset = DomainDataset(f"generated_{class_id}", scenes, labeled=False)
            path = save_dataset(dataset, self.augmented_data(class_id), cfg.model.num_classes)
            self.manifest.record_artifact(f"augmented_{class_id}", path)

    def stored_augmentations(self) -> Dict[int, List[np.ndarray]]:
        if not self.config.augmentation_enabled:
            return {}
        found = {}
        for class_id in self.inconsistency_report().unstable:
            path = self.augmented_data(class_id)
            if path.exists():
                found[class_id] = load_dataset(path, with_labels=False).images
        return found

    def distill_model(
        self,
        distill_cfg: DistillConfig,
        augmentations: Mapping[int, Sequence[np.ndarray]],
        curve_name: Optional[str] = None,
    ) -> SegModel:
        cfg = self.config
        workers = max(distill_cfg.teacher_workers, self.runtime.teacher_workers)
        distill_cfg = replace(distill_cfg, teacher_workers=workers)
        distill_set = build_distill_set(self.server_set(), augmentations)
        result = distill_global_with_history(
            self.load_clients(),
            distill_set,
            cfg.global_model,
            distill_cfg,
            self.seed_for("distill"),
            client_ids=cfg.client_ids,
        )
        if curve_name:
            path = write_curve_csv(result.history, self.reports_dir / curve_name)
            self.manifest.record_artifact("distill_curve", path)
        return result.model

    def distill(self) -> None:
        if not self.clients_uploaded():
            raise ContractError("distillation needs every client checkpoint")
        model = self.distill_model(
            self.config.distill, self.stored_augmentations(), "distill_curve.csv"
        )
        self._write_model("global", model, self.checkpoint_dir / "global.ckpt")

    def baselines(self) -> None:
        cfg = self.config
        aggregated = fedavg_aggregate(self.load_clients(), cfg.fedavg_weights)
        server_labeled = load_dataset(self.data_dir / "server_labeled")
        fedavg = fedavg_finetune(
            aggregated, server_labeled, cfg.fedavg_train, self.seed_for("fedavg")
        )
        self._write_model("fedavg", fedavg, self.checkpoint_dir / "fedavg.ckpt")
        if cfg.centralized_upper_bound:
            datasets = [load_dataset(self.client_data(k)) for k in range(cfg.num_clients)]
            model = train_centralized(datasets, cfg.model, cfg.train, self.seed_for("centralized"))
            self._write_model("centralized", model, self.checkpoint_dir / "centralized.ckpt")

    def targets(self) -> List[DomainDataset]:
        return [load_dataset(self.target_data(d)) for d in self.config.target_ids]

    def evaluate_checkpoint(
        self, model: SegModel, targets: Sequence[DomainDataset]
    ) -> EvaluationSummary:
        return evaluate_on_domains(
            model,
            targets,
            self.class_names,
            exclude_absent=self.config.exclude_absent,
            workers=self.runtime.eval_workers,
        )

    def evaluate(self) -> None:
        cfg = self.config
        targets = self.targets()
        models: Dict[str, Path] = {
            f"client_{cid}": self.client_checkpoint(k) for k, cid in enumerate(cfg.client_ids)
        }
        models["global"] = self.checkpoint_dir / "global.ckpt"
        models["fedavg"] = self.checkpoint_dir / "fedavg.ckpt"
        if cfg.centralized_upper_bound:
            models["centralized"] = self.checkpoint_dir / "centralized.ckpt"

        results: Dict[str, EvaluationSummary] = {}
        for name, path in models.items():
            results[name] = self.evaluate_checkpoint(read_checkpoint(path), targets)
            write_evaluation(name, results[name], self.reports_dir)
            logger.info(f"{name}: average mIoU {results[name].average_miou:.4f}")
        self.manifest.record_artifact(
            "summary", write_summary(results, self.reports_dir / "summary.csv")
        )
        self.manifest.record_artifact(
            "per_class_iou", write_per_class(results, self.reports_dir / "per_class_iou.csv")
        )
        self.manifest.record_artifact(
            "summary_json", write_summary_json(results, self.reports_dir / "summary.json")
        )

    # Orchestration

    def run_stage(self, stage: str) -> None:
        """Run one stage, recording completion or failure in the manifest."""
        if stage not in self.stage_handlers:
            raise ContractError(f"unknown stage '{stage}'; stages are {STAGES}")
        started = time.monotonic()
        try:
            self.manifest.require_before(stage)
            logger.info(f"Stage '{stage}' starting")
            self.stage_handlers[stage]()
        except Exception as e:
            elapsed = time.monotonic() - started
            logger.error(f"Stage '{stage}' failed after {elapsed:.1f}s: {e}")
            self.manifest.mark_failed(stage, elapsed, f"{type(e).__name__}: {e}")
            self.save()
            raise StageError(stage, str(e), e) from e
        elapsed = time.monotonic() - started
        self.manifest.mark_completed(stage, elapsed)
        self.save()
        logger.info(f"Stage '{stage}' completed in {elapsed:.1f}s")

    def run(self, until: Optional[str] = None) -> RunManifest:
        """Run every incomplete stage in order, optionally stopping after ``until``."""
        if until is not None and until not in STAGES:
            raise ContractError(f"unknown stage '{until}'; stages are {STAGES}")
        self.generate_data()
        for stage in STAGES:
            if not self.manifest.is_complete(stage):
                self.run_stage(stage)
            else:
                logger.debug(f"Stage '{stage}' already complete")
            if stage == until:
                break
        return self.manifest

    def get_status(self) -> Dict[str, Any]:
        return {
            "run_dir": str(self.run_dir),
            "config_hash": self.manifest.config_hash,
            "data_ready": self.manifest.data_ready,
            "completed": self.manifest.completed_stages,
            "next": self.manifest.first_incomplete(),
            "checkpoint_writes": dict(self.manifest.write_counts),
        }

    # Studies on top of a finished protocol

    def run_ablation(self, axes: Sequence[str]) -> List[Dict[str, Any]]:
        """Re-distill with components switched off; all rows reuse the same clients and seeds."""
        rows = ablation_rows(axes)
        self.run(until="augment")
        targets = self.targets()
        stored = self.stored_augmentations()
        results = []
        for row in rows:
            distill_cfg = replace(
                self.config.distill, fusion_enabled=row.fusion, use_bce=row.bce, use_dice=row.dice
            )
            model = self.distill_model(distill_cfg, stored if row.augmentation else {})
            summary = self.evaluate_checkpoint(model, targets)
            logger.info(f"Ablation '{row.name}': average mIoU {summary.average_miou:.4f}")
            results.append(
                {
                    "name": row.name,
                    "fusion": row.fusion,
                    "augmentation": row.augmentation,
                    "bce": row.bce,
                    "dice": row.dice,
                    "domains": {r.domain_id: r.miou for r in summary.reports},
                    "average_miou": summary.average_miou,
                }
            )
        header = ["configuration", "fusion", "augmentation", "bce", "dice"]
        header += self.config.target_ids + ["average"]
        path = write_csv(
            self.reports_dir / "ablation.csv",
            header,
            (
                [r["name"], int(r["fusion"]), int(r["augmentation"]), int(r["bce"]), int(r["dice"])]
                + [float(r["domains"][d]) for d in self.config.target_ids]
                + [float(r["average_miou"])]
                for r in results
            ),
        )
        self.manifest.record_artifact("ablation", path)
        self.save()
        return results

    def run_sample_sweep(self, counts: Optional[Sequence[int]] = None) -> List[Dict[str, Any]]:
        """Full distillation with ``n`` generated images per unstable class, for each ``n``."""
        counts = list(counts if counts is not None else self.config.sweep_counts)
        self.run(until="score_inconsistency")
        unstable = self.inconsistency_report().unstable
        if not unstable:
            logger.warning("No unstable classes; every sweep row distills on the server set alone")
        targets = self.targets()
        results = []
        for n in counts:
            augmentations = self.generate_augmentations(unstable, n) if n else {}
            model = self.distill_model(self.config.distill, augmentations)
            summary = self.evaluate_checkpoint(model, targets)
            logger.info(f"{n} images per unstable class: average mIoU {summary.average_miou:.4f}")
            results.append(
                {
                    "images_per_class": n,
                    "domains": {r.domain_id: r.miou for r in summary.reports},
                    "average_miou": summary.average_miou,
                }
            )
        path = write_csv(
            self.reports_dir / "sample_sweep.csv",
            ["images_per_class"] + self.config.target_ids + ["average"],
            (
                [r["images_per_class"]]
                + [float(r["domains"][d]) for d in self.config.target_ids]
                + [float(r["average_miou"])]
                for r in results
            ),
        )
        self.manifest.record_artifact("sample_sweep", path)
        self.save()
        return results


def run_experiment(config: ExperimentConfig, until: Optional[str] = None) -> RunManifest:
    """Generate data if needed and run the protocol, resuming at the first incomplete stage."""
    return ExperimentRunner(config).run(until)


def run_ablation(config: ExperimentConfig, axes: Sequence[str]) -> List[Dict[str, Any]]:
    return ExperimentRunner(config).run_ablation(axes)


def run_sample_sweep(
    config: ExperimentConfig, counts: Optional[Sequence[int]] = None
) -> List[Dict[str, Any]]:
    return ExperimentRunner(config).run_sample_sweep(counts)
