"""
Utility helper functions: seed derivation, config hashing, CSV output.
"""

import csv
import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Sequence, Union

SEED_MASK = (1 << 63) - 1


def derive_seed(master: int, name: str) -> int:
    """Stable 63-bit seed for a named stage, independent of ``PYTHONHASHSEED``."""
    digest = hashlib.sha256(f"{int(master)}:{name}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & SEED_MASK


def derive_seed_map(master: int, names: Iterable[str]) -> Dict[str, int]:
    return {name: derive_seed(master, name) for name in names}


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"))


def config_hash(data: Mapping[str, Any]) -> str:
    """SHA-256 of the canonical JSON form."""
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def format_float(value: float, digits: int = 6) -> str:
    """Fixed-precision text so reports are byte-stable; NaN prints as ``nan``."""
    if value != value:
        return "nan"
    return f"{value:.{digits}f}"


def write_csv(
    path: Union[str, Path], header: Sequence[str], rows: Iterable[Sequence[Any]]
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) if isinstance(v, float) else v for v in row])
    return path


def read_csv(path: Union[str, Path]) -> list:
    with Path(path).open(newline="") as f:
        return list(csv.DictReader(f))
