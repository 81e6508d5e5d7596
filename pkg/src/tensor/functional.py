"""Functional wrappers around the primitives, plus a few composites built from them."""

from typing import Optional, Sequence, Tuple

from .tensor import Tensor, apply_primitive


def add(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("add", [a, b])


def sub(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("sub", [a, b])


def mul(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("mul", [a, b])


def div(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("div", [a, b])


def scalar_mul(x: Tensor, value: float) -> Tensor:
    return apply_primitive("scalar_mul", [x], {"value": value})


def scalar_add(x: Tensor, value: float) -> Tensor:
    return apply_primitive("scalar_add", [x], {"value": value})


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return apply_primitive("matmul", [a, b])


def conv2d_3x3(x: Tensor, weight: Tensor, bias: Tensor, stride: int = 1) -> Tensor:
    return apply_primitive("conv2d_3x3_same", [x, weight, bias], {"stride": stride})


def relu(x: Tensor) -> Tensor:
    return apply_primitive("relu", [x])


def sigmoid(x: Tensor) -> Tensor:
    return apply_primitive("sigmoid", [x])


def softplus(x: Tensor) -> Tensor:
    return apply_primitive("softplus", [x])


def softmax(x: Tensor, axis: int) -> Tensor:
    return apply_primitive("softmax_axis", [x], {"axis": axis})


def log_softmax(x: Tensor, axis: int) -> Tensor:
    return apply_primitive("log_softmax_axis", [x], {"axis": axis})


def exp(x: Tensor) -> Tensor:
    return apply_primitive("exp", [x])


def log(x: Tensor) -> Tensor:
    return apply_primitive("log", [x])


def sum_axis(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    return apply_primitive("sum_axis", [x], {"axis": axis, "keepdims": keepdims})


def mean_axis(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    return apply_primitive("mean_axis", [x], {"axis": axis, "keepdims": keepdims})


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    return apply_primitive("concat_axis", list(xs), {"axis": axis})


def reshape(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return apply_primitive("reshape", [x], {"shape": shape})


def transpose(x: Tensor) -> Tensor:
    return apply_primitive("transpose2", [x])


def broadcast_to(x: Tensor, shape: Tuple[int, ...]) -> Tensor:
    return apply_primitive("broadcast", [x], {"shape": shape})


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Row-wise affine map ``x @ weight + bias`` for a 2-d ``x``."""
    out = matmul(x, weight)
    return add(out, broadcast_to(bias, out.shape))


def bce_with_logits(logits: Tensor, targets: Tensor) -> Tensor:
    """Elementwise binary cross-entropy of sigmoid(logits) against soft targets.

    Uses ``softplus(x) - t * x``, which equals ``-[t log s + (1 - t) log(1 - s)]``
    and stays finite when the sigmoid saturates.
    """
    return sub(softplus(logits), mul(targets, logits))
