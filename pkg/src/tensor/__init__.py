"""Tensor engine: float64 arrays, reverse-mode gradients and AdamW."""

from . import functional
from .gradcheck import finite_diff_check
from .optim import AdamWState, adamw_step
from .primitives import get_primitive, primitive_names
from .tensor import (
    GradientMap,
    GradTape,
    Tensor,
    apply_primitive,
    backward,
    constant,
    current_tape,
    no_grad,
)

__all__ = [
    "AdamWState",
    "GradTape",
    "GradientMap",
    "Tensor",
    "adamw_step",
    "apply_primitive",
    "backward",
    "constant",
    "current_tape",
    "finite_diff_check",
    "functional",
    "get_primitive",
    "no_grad",
    "primitive_names",
]
