"""
On-disk dataset format.

A dataset directory holds ``manifest.json`` (domain_id, C, n, H, W, labeled)
and per-scene raw files: ``NNNNN.image.f32`` (little-endian float32, 3*H*W)
and, for labeled sets only, ``NNNNN.labels.u8`` (H*W bytes).
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np

from ..core.exceptions import ContractError, DimensionError
from ..models.inference import LabelMap
from .domain import DomainDataset, Scene

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
IMAGE_SUFFIX = ".image.f32"
LABEL_SUFFIX = ".labels.u8"


def _scene_stem(index: int) -> str:
    return f"{index:05d}"


def save_dataset(
    dataset: DomainDataset, directory: Union[str, Path], num_classes: int
) -> Path:
    """Write ``dataset``; label files are written only when it is labeled."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not len(dataset):
        raise ContractError(f"refusing to write empty dataset '{dataset.domain_id}'")
    height, width = dataset.scenes[0].shape
    for index, scene in enumerate(dataset.scenes):
        if scene.shape != (height, width):
            raise DimensionError(f"scene {index} is {scene.shape}, expected {(height, width)}")
        stem = _scene_stem(index)
        (directory / f"{stem}{IMAGE_SUFFIX}").write_bytes(scene.image.astype("<f4").tobytes())
        if dataset.labeled and scene.labels is not None:
            (directory / f"{stem}{LABEL_SUFFIX}").write_bytes(scene.labels.ids.tobytes())
    manifest = {
        "domain_id": dataset.domain_id,
        "C": num_classes,
        "n": len(dataset),
        "H": height,
        "W": width,
        "labeled": dataset.labeled,
    }
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    logger.info(f"Saved dataset '{dataset.domain_id}' ({len(dataset)} scenes) to {directory}")
    return directory


def read_dataset_manifest(directory: Union[str, Path]) -> Dict[str, Any]:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        raise ContractError(f"no dataset manifest at {path}")
    manifest: Dict[str, Any] = json.loads(path.read_text())
    return manifest


def load_dataset(directory: Union[str, Path], with_labels: bool = True) -> DomainDataset:
    """Read a dataset directory.

    With ``with_labels=False`` no label file is opened, even when the
    directory holds a labeled set.
    """
    directory = Path(directory)
    manifest = read_dataset_manifest(directory)
    height, width = int(manifest["H"]), int(manifest["W"])
    labeled = bool(manifest["labeled"]) and with_labels
    scenes = []
    for index in range(int(manifest["n"])):
        stem = _scene_stem(index)
        raw = np.frombuffer((directory / f"{stem}{IMAGE_SUFFIX}").read_bytes(), dtype="<f4")
        if raw.size != 3 * height * width:
            raise DimensionError(f"{stem}{IMAGE_SUFFIX}: expected {3 * height * width} values")
        image = raw.astype(np.float64).reshape(3, height, width)
        labels = None
        if labeled:
            label_path = directory / f"{stem}{LABEL_SUFFIX}"
            if not label_path.exists():
                raise ContractError(f"labeled dataset is missing {label_path.name}")
            ids = np.frombuffer(label_path.read_bytes(), dtype=np.uint8).reshape(height, width)
            labels = LabelMap(ids.copy())
        scenes.append(Scene(image, labels))
    return DomainDataset(str(manifest["domain_id"]), scenes, labeled=labeled)
