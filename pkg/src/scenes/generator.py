"""
Procedural scene rendering.

Scenes are layered compositions: background stripes (sky above a horizon,
a vegetation band, road below) with class blobs sampled from the domain's
class prior on top. Pixel colours come from the class palette plus noise and
a class-specific texture, followed by the domain's photometric shift.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Tuple

import numpy as np

from ..core.exceptions import ContractError
from ..models.inference import LabelMap
from .domain import DomainDataset, DomainSpec, Scene

logger = logging.getLogger(__name__)

FOCUS_MIN_SIDE = 0.5
FOCUS_MAX_SIDE = 0.7


def scene_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for one scene, derived from the base seed."""
    return np.random.default_rng([int(seed), *(int(s) for s in stream)])


def _paint_blob(
    labels: np.ndarray, rng: np.random.Generator, class_id: int, top: int, spec: DomainSpec
) -> None:
    h, w = labels.shape
    lo, hi = spec.blob_size_range
    bh = max(1, int(round(rng.uniform(lo, hi) * h)))
    bw = max(1, int(round(rng.uniform(lo, hi) * w)))
    cy = int(rng.integers(min(top, h - 1), h))
    cx = int(rng.integers(0, w))
    ys, xs = np.ogrid[:h, :w]
    if rng.random() < 0.5:
        region = (np.abs(ys - cy) <= bh / 2) & (np.abs(xs - cx) <= bw / 2)
    else:
        region = ((ys - cy) / (bh / 2)) ** 2 + ((xs - cx) / (bw / 2)) ** 2 <= 1.0
    labels[region] = class_id


def _paint_focus(labels: np.ndarray, rng: np.random.Generator, class_id: int) -> None:
    h, w = labels.shape
    bh = int(np.ceil(rng.uniform(FOCUS_MIN_SIDE, FOCUS_MAX_SIDE) * h))
    bw = int(np.ceil(rng.uniform(FOCUS_MIN_SIDE, FOCUS_MAX_SIDE) * w))
    y0 = int(rng.integers(0, h - bh + 1))
    x0 = int(rng.integers(0, w - bw + 1))
    labels[y0 : y0 + bh, x0 : x0 + bw] = class_id


def render_layout(
    spec: DomainSpec, rng: np.random.Generator, focus_class: Optional[int] = None
) -> np.ndarray:
    """Label layout of one scene. A focus class gets one large rectangle drawn last."""
    h, w = spec.height, spec.width
    road, sky, vegetation = spec.background_classes
    labels = np.empty((h, w), dtype=np.uint8)
    horizon = int(rng.uniform(*spec.horizon_range) * h)
    band = int(rng.uniform(*spec.vegetation_band) * h)
    labels[:horizon] = sky
    labels[horizon : horizon + band] = vegetation
    labels[horizon + band :] = road

    lo, hi = spec.blob_count_range
    prior = spec.prior
    for _ in range(int(rng.integers(lo, hi + 1))):
        class_id = int(rng.choice(spec.num_classes, p=prior))
        _paint_blob(labels, rng, class_id, horizon, spec)
    if focus_class is not None:
        _paint_focus(labels, rng, focus_class)
    return labels


def render_image(spec: DomainSpec, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Colour a label layout and apply the domain's photometric shift."""
    h, w = labels.shape
    colors = np.asarray(spec.class_colors, dtype=np.float64)
    noise = np.asarray(spec.class_noise, dtype=np.float64)
    image = colors[labels]
    image = image + rng.standard_normal((h, w, 3)) * noise[labels][..., None]

    ys, xs = np.mgrid[:h, :w]
    freq = 0.15 + 0.1 * (labels % 4)
    texture = 0.04 * np.sin(2.0 * np.pi * freq * (xs + 0.5 * ys))
    image = image + texture[..., None]

    image = (image - 0.5) * spec.contrast + 0.5 + np.asarray(spec.color_offset)
    return np.clip(image, 0.0, 1.0).transpose(2, 0, 1).copy()


def render_scene(
    spec: DomainSpec, rng: np.random.Generator, focus_class: Optional[int] = None
) -> Tuple[np.ndarray, LabelMap]:
    labels = render_layout(spec, rng, focus_class)
    return render_image(spec, labels, rng), LabelMap(labels)


def make_domain(
    spec: DomainSpec, n: int, seed: int, labeled: bool = True, workers: int = 1
) -> DomainDataset:
    """Generate ``n`` scenes; a pure function of ``(spec, n, seed)``."""
    if n < 1:
        raise ContractError(f"dataset size must be >= 1, got {n}")
    spec.validate()

    def build(index: int) -> Scene:
        image, labels = render_scene(spec, scene_rng(seed, index))
        return Scene(image, labels if labeled else None)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scenes = list(pool.map(build, range(n)))
    else:
        scenes = [build(i) for i in range(n)]
    logger.info(f"Generated domain '{spec.domain_id}': {n} scenes (labeled: {labeled})")
    return DomainDataset(spec.domain_id, scenes, labeled=labeled)
