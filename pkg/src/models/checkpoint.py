"""
Checkpoint codec.

Layout: 8-byte little-endian manifest length, UTF-8 JSON manifest
(format version, model config, ordered parameter records), then one
little-endian float32 blob holding every parameter in manifest order.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np

from ..core.exceptions import ConfigError, CorruptCheckpointError, DimensionError
from ..tensor import Tensor
from .segmodel import SegModel, SegModelConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_HEADER = struct.Struct("<Q")
_BLOB_DTYPE = np.dtype("<f4")


def build_manifest(model: SegModel) -> Dict[str, Any]:
    records = []
    offset = 0
    for name, array in model.named_arrays():
        records.append({"name": name, "shape": list(array.shape), "offset": offset})
        offset += array.size * _BLOB_DTYPE.itemsize
    return {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "params": records,
        "num_tensors": len(records),
        "num_values": model.num_parameters(),
        "blob_bytes": offset,
    }


def save_checkpoint(model: SegModel) -> bytes:
    """Length-prefixed JSON manifest followed by the little-endian float32 blob."""
    manifest = json.dumps(build_manifest(model), sort_keys=True).encode("utf-8")
    blob = b"".join(array.astype(_BLOB_DTYPE).tobytes() for _, array in model.named_arrays())
    return _HEADER.pack(len(manifest)) + manifest + blob


def read_manifest(data: bytes) -> Dict[str, Any]:
    """Parse only the manifest of a checkpoint."""
    if len(data) < _HEADER.size:
        raise CorruptCheckpointError("checkpoint shorter than its header")
    (length,) = _HEADER.unpack_from(data)
    if _HEADER.size + length > len(data):
        raise CorruptCheckpointError("manifest length exceeds checkpoint size")
    try:
        manifest = json.loads(data[_HEADER.size : _HEADER.size + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptCheckpointError(f"unreadable manifest: {e}") from e
    if not isinstance(manifest, dict) or manifest.get("format_version") != FORMAT_VERSION:
        raise CorruptCheckpointError("unsupported checkpoint format version")
    return manifest


def load_checkpoint(data: bytes) -> SegModel:
    """Rebuild a model from checkpoint bytes; any inconsistency raises CorruptCheckpointError."""
    manifest = read_manifest(data)
    (length,) = _HEADER.unpack_from(data)
    blob = data[_HEADER.size + length :]
    try:
        records = manifest["params"]
        expected = sum(int(np.prod(r["shape"])) for r in records) * _BLOB_DTYPE.itemsize
        config = SegModelConfig.from_dict(manifest["config"])
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptCheckpointError(f"malformed manifest: {e}") from e
    if len(blob) != expected:
        raise CorruptCheckpointError(
            f"manifest/blob length mismatch: expected {expected} bytes, found {len(blob)}"
        )

    params: Dict[str, Tensor] = {}
    try:
        for record in records:
            shape = tuple(int(s) for s in record["shape"])
            values = np.frombuffer(
                blob, dtype=_BLOB_DTYPE, count=int(np.prod(shape)), offset=int(record["offset"])
            )
            name = str(record["name"])
            params[name] = Tensor(
                values.astype(np.float64).reshape(shape), requires_grad=True, name=name
            )
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptCheckpointError(f"bad parameter record: {e}") from e
    try:
        return SegModel(config, params)
    except (ConfigError, DimensionError) as e:
        raise CorruptCheckpointError(f"parameters do not match the stored config: {e}") from e


def write_checkpoint(model: SegModel, path: Union[str, Path]) -> Path:
    """Save ``model`` to ``path``, creating parent directories."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(save_checkpoint(model))
    logger.info(f"Wrote checkpoint {path} ({model.num_parameters()} values)")
    return path


def read_checkpoint(path: Union[str, Path]) -> SegModel:
    """Load a model from a checkpoint file."""
    return load_checkpoint(Path(path).read_bytes())
