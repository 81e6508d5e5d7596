"""
Miniature query-based segmentation model.

The model keeps the backbone / pixel decoder / transformer decoder split of
mask-classification segmenters: a strided conv backbone produces features,
a 1x1 projection turns them into per-pixel embeddings, and a single
cross-attention block lets learned queries read the features before a class
head (C real classes plus background) and a mask-embedding head.
"""

import logging
import math
from dataclasses import asdict, dataclass, replace
from typing import Any, Dict, Iterator, Mapping, Tuple

import numpy as np

from ..core.exceptions import ConfigError, DimensionError
from ..tensor import Tensor
from ..tensor import functional as F

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SegModelConfig:
    """Architecture hyperparameters shared by clients and the global model."""

    num_classes: int = 6
    num_queries: int = 8
    feature_channels: int = 16
    backbone_depth: int = 2
    embed_dim: int = 16
    height: int = 32
    width: int = 32

    @property
    def stride(self) -> int:
        return 2**self.backbone_depth

    @property
    def feature_height(self) -> int:
        return self.height // self.stride

    @property
    def feature_width(self) -> int:
        return self.width // self.stride

    @property
    def feature_shape(self) -> Tuple[int, int, int]:
        return (self.feature_channels, self.feature_height, self.feature_width)

    def validate(self) -> None:
        """Raise ConfigError when the architecture is not buildable."""
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.num_classes >= 255:
            raise ConfigError("num_classes must stay below the ignore id 255")
        if self.num_queries < 1:
            raise ConfigError(f"num_queries must be >= 1, got {self.num_queries}")
        if self.backbone_depth < 1:
            raise ConfigError("backbone_depth must be >= 1")
        if min(self.feature_channels, self.embed_dim, self.height, self.width) < 1:
            raise ConfigError("channel counts and input size must be positive")
        if self.height % self.stride or self.width % self.stride:
            raise ConfigError(
                f"input {self.height}x{self.width} is not divisible by backbone stride "
                f"{self.stride}"
            )

    def with_queries(self, num_queries: int) -> "SegModelConfig":
        return replace(self, num_queries=num_queries)

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SegModelConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**{k: int(v) for k, v in data.items()})


@dataclass
class LogitPair:
    """Per-query class logits (Q x (C+1)) and mask logits (Q x H' x W')."""

    cls: Tensor
    mask: Tensor

    @property
    def num_queries(self) -> int:
        return self.cls.shape[0]


def parameter_shapes(config: SegModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Ordered parameter layout for ``config``."""
    c_f, d = config.feature_channels, config.embed_dim
    shapes: Dict[str, Tuple[int, ...]] = {}
    in_channels = 3
    for i in range(config.backbone_depth):
        shapes[f"backbone.conv{i}.weight"] = (c_f, in_channels, 3, 3)
        shapes[f"backbone.conv{i}.bias"] = (c_f,)
        in_channels = c_f
    shapes["pixel_decoder.proj.weight"] = (d, c_f)
    shapes["pixel_decoder.proj.bias"] = (d, 1)
    shapes["decoder.query_embed"] = (config.num_queries, d)
    shapes["decoder.attn.query.weight"] = (d, d)
    shapes["decoder.attn.key.weight"] = (c_f, d)
    shapes["decoder.attn.value.weight"] = (c_f, d)
    shapes["decoder.class_head.weight"] = (d, config.num_classes + 1)
    shapes["decoder.class_head.bias"] = (config.num_classes + 1,)
    shapes["decoder.mask_embed.weight"] = (d, d)
    shapes["decoder.mask_embed.bias"] = (d,)
    return shapes


class SegModel:
    """Parameters of one segmentation model plus its architecture config."""

    def __init__(self, config: SegModelConfig, params: Dict[str, Tensor]):
        expected = parameter_shapes(config)
        if list(params) != list(expected):
            raise ConfigError("parameter names do not match the architecture layout")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise DimensionError(f"{name}: expected {shape}, got {params[name].shape}")
        self.config = config
        self.params = params

    def parameters(self) -> Dict[str, Tensor]:
        return self.params

    def named_arrays(self) -> Iterator[Tuple[str, np.ndarray]]:
        for name, p in self.params.items():
            yield name, p.data

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "SegModel":
        return SegModel(
            self.config,
            {
                name: Tensor(p.data, requires_grad=True, name=name)
                for name, p in self.params.items()
            },
        )

    def __repr__(self) -> str:
        return f"SegModel({self.config}, {self.num_parameters()} values)"


def init_model(config: SegModelConfig, seed: int) -> SegModel:
    """Seeded initialisation: fan-in uniform weights, zero biases, scaled normal queries."""
    config.validate()
    rng = np.random.default_rng(seed)
    params: Dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".bias"):
            values = np.zeros(shape)
        elif name == "decoder.query_embed":
            values = rng.standard_normal(shape) / math.sqrt(config.embed_dim)
        elif name.startswith("backbone."):
            fan_in = shape[1] * 9
            bound = math.sqrt(6.0 / fan_in)
            values = rng.uniform(-bound, bound, size=shape)
        else:
            fan_in = shape[1] if name == "pixel_decoder.proj.weight" else shape[0]
            bound = 1.0 / math.sqrt(fan_in)
            values = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(values, requires_grad=True, name=name)
    logger.debug(f"Initialised model with seed {seed}: {config}")
    return SegModel(config, params)


def backbone_forward(model: SegModel, image: Tensor) -> Tensor:
    """Features ``C_f x H' x W'`` of a ``3 x H x W`` image."""
    cfg = model.config
    if image.shape != (3, cfg.height, cfg.width):
        expected = (3, cfg.height, cfg.width)
        raise DimensionError(f"expected image of shape {expected}, got {image.shape}")
    x = F.reshape(image, (1, 3, cfg.height, cfg.width))
    for i in range(cfg.backbone_depth):
        x = F.conv2d_3x3(
            x, model.params[f"backbone.conv{i}.weight"], model.params[f"backbone.conv{i}.bias"], 2
        )
        x = F.relu(x)
    return F.reshape(x, cfg.feature_shape)


def pixel_embeddings(model: SegModel, features: Tensor) -> Tensor:
    """1x1 projection of features to ``d x (H'W')`` per-pixel embeddings."""
    cfg = model.config
    flat = F.reshape(features, (cfg.feature_channels, cfg.feature_height * cfg.feature_width))
    proj = F.matmul(model.params["pixel_decoder.proj.weight"], flat)
    return F.add(proj, F.broadcast_to(model.params["pixel_decoder.proj.bias"], proj.shape))


def decode(model: SegModel, features: Tensor) -> LogitPair:
    """Run both decoders on backbone-shaped features, whoever produced them."""
    cfg = model.config
    if features.shape != cfg.feature_shape:
        raise DimensionError(
            f"expected features of shape {cfg.feature_shape}, got {features.shape}"
        )
    p = model.params
    n_pix = cfg.feature_height * cfg.feature_width

    tokens = F.transpose(F.reshape(features, (cfg.feature_channels, n_pix)))
    keys = F.matmul(tokens, p["decoder.attn.key.weight"])
    values = F.matmul(tokens, p["decoder.attn.value.weight"])
    queries = F.matmul(p["decoder.query_embed"], p["decoder.attn.query.weight"])
    scores = F.scalar_mul(F.matmul(queries, F.transpose(keys)), 1.0 / math.sqrt(cfg.embed_dim))
    attended = F.matmul(F.softmax(scores, axis=1), values)
    hidden = F.add(p["decoder.query_embed"], attended)

    cls_logits = F.linear(hidden, p["decoder.class_head.weight"], p["decoder.class_head.bias"])
    query_embedding = F.linear(hidden, p["decoder.mask_embed.weight"], p["decoder.mask_embed.bias"])
    masks = F.matmul(query_embedding, pixel_embeddings(model, features))
    return LogitPair(
        cls=cls_logits,
        mask=F.reshape(masks, (cfg.num_queries, cfg.feature_height, cfg.feature_width)),
    )


def predict(model: SegModel, image: Tensor) -> LogitPair:
    return decode(model, backbone_forward(model, image))
