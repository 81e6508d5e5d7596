"""
Primitive operations of the tensor engine.

Each primitive works on raw float64 arrays: ``forward`` returns the output and
whatever activations the backward rule needs, ``backward`` maps the upstream
gradient to one gradient per input. Shapes are never coerced implicitly; the
only broadcasting primitive is ``broadcast``.
"""

from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Type

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..core.exceptions import DimensionError, DomainError

Array = np.ndarray
Attrs = Mapping[str, Any]


class Primitive:
    """Base class for a differentiable primitive."""

    name: str = ""
    arity: Optional[int] = None

    def check(self, xs: Sequence[Array], attrs: Attrs) -> None:
        if self.arity is not None and len(xs) != self.arity:
            raise DimensionError(f"{self.name} expects {self.arity} inputs, got {len(xs)}")

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        raise NotImplementedError

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        raise NotImplementedError


_REGISTRY: Dict[str, Primitive] = {}


def register(cls: Type[Primitive]) -> Type[Primitive]:
    """Class decorator adding a primitive to the registry under ``cls.name``."""
    _REGISTRY[cls.name] = cls()
    return cls


def get_primitive(name: str) -> Primitive:
    """Look up a primitive by its op id."""
    try:
        return _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown primitive '{name}'") from None


def primitive_names() -> List[str]:
    return sorted(_REGISTRY)


def _same_shape(name: str, a: Array, b: Array) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} differ")


def _norm_axis(name: str, axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"{name}: axis {axis} out of range for {ndim}-d input")
    return axis % ndim


def _expand_reduced(g: Array, shape: Tuple[int, ...], axis: Optional[int], keepdims: bool) -> Array:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape).copy()


@register
class Add(Primitive):
    name = "add"
    arity = 2

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        _same_shape(self.name, xs[0], xs[1])
        return xs[0] + xs[1], None

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        return [g, g]


@register
class Sub(Primitive):
    name = "sub"
    arity = 2

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        _same_shape(self.name, xs[0], xs[1])
        return xs[0] - xs[1], None

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        return [g, -g]


@register
class Mul(Primitive):
    name = "mul"
    arity = 2

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        _same_shape(self.name, xs[0], xs[1])
        return xs[0] * xs[1], None

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        return [g * xs[1], g * xs[0]]


@register
class Div(Primitive):
    name = "div"
    arity = 2

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        _same_shape(self.name, xs[0], xs[1])
        if np.any(xs[1] == 0.0):
            raise DomainError("div: division by zero")
        return xs[0] / xs[1], None

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        return [g / xs[1], -g * xs[0] / (xs[1] * xs[1])]


@register
class ScalarMul(Primitive):
    name = "scalar_mul"
    arity = 1

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        return xs[0] * float(attrs["value"]), None

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        return [g * float(attrs["value"])]


@register
class ScalarAdd(Primitive):
    name = "scalar_add"
    arity = 1

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        return xs[0] + float(attrs["value"]), None

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        return [g]


@register
class MatMul(Primitive):
    name = "matmul"
    arity = 2

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        a, b = xs
        if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
            raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
        return a @ b, None

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        a, b = xs
        return [g @ b.T, a.T @ g]


@register
class Conv2d3x3Same(Primitive):
    """3x3 convolution with one pixel of zero padding, stride 1 or 2.

    Inputs: x (N, Cin, H, W), weight (Cout, Cin, 3, 3), bias (Cout,).
    """

    name = "conv2d_3x3_same"
    arity = 3

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        x, w, b = xs
        stride = int(attrs.get("stride", 1))
        if stride not in (1, 2):
            raise DimensionError(f"conv2d_3x3_same: unsupported stride {stride}")
        if x.ndim != 4 or w.ndim != 4 or w.shape[1:] != (x.shape[1], 3, 3):
            raise DimensionError(
                f"conv2d_3x3_same: input {x.shape} does not match kernel {w.shape}"
            )
        if b.shape != (w.shape[0],):
            raise DimensionError(f"conv2d_3x3_same: bias {b.shape} for {w.shape[0]} outputs")
        n, cin = x.shape[:2]
        cout = w.shape[0]
        padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        windows = sliding_window_view(padded, (3, 3), axis=(2, 3))[:, :, ::stride, ::stride]
        ho, wo = windows.shape[2], windows.shape[3]
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * 9)
        out = cols @ w.reshape(cout, cin * 9).T + b
        return out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2), cols

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        x, w, _ = xs
        cols = saved
        stride = int(attrs.get("stride", 1))
        n, cin, h, wd = x.shape
        cout = w.shape[0]
        ho, wo = g.shape[2], g.shape[3]
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gw = (gmat.T @ cols).reshape(w.shape)
        gb = gmat.sum(axis=0)
        gcols = (gmat @ w.reshape(cout, cin * 9)).reshape(n, ho, wo, cin, 3, 3)
        gpad = np.zeros((n, cin, h + 2, wd + 2))
        for i in range(3):
            for j in range(3):
                gpad[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        return [gpad[:, :, 1:-1, 1:-1], gw, gb]


@register
class Relu(Primitive):
    name = "relu"
    arity = 1

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        return np.maximum(xs[0], 0.0), None

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        return [g * (xs[0] > 0.0)]


def stable_sigmoid(x: Array) -> Array:
    """Logistic function without overflow for large negative inputs."""
    z = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))


@register
class Sigmoid(Primitive):
    name = "sigmoid"
    arity = 1

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        return stable_sigmoid(xs[0]), None

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        return [g * out * (1.0 - out)]


@register
class Softplus(Primitive):
    """log(1 + exp(x)); used for numerically safe binary cross-entropy."""

    name = "softplus"
    arity = 1

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        return np.logaddexp(0.0, xs[0]), None

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        return [g * stable_sigmoid(xs[0])]


def softmax_array(x: Array, axis: int) -> Array:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax_array(x: Array, axis: int) -> Array:
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


@register
class SoftmaxAxis(Primitive):
    name = "softmax_axis"
    arity = 1

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        axis = _norm_axis(self.name, int(attrs["axis"]), xs[0].ndim)
        return softmax_array(xs[0], axis), None

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        axis = _norm_axis(self.name, int(attrs["axis"]), xs[0].ndim)
        return [out * (g - (g * out).sum(axis=axis, keepdims=True))]


@register
class LogSoftmaxAxis(Primitive):
    name = "log_softmax_axis"
    arity = 1

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        axis = _norm_axis(self.name, int(attrs["axis"]), xs[0].ndim)
        return log_softmax_array(xs[0], axis), None

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        axis = _norm_axis(self.name, int(attrs["axis"]), xs[0].ndim)
        return [g - np.exp(out) * g.sum(axis=axis, keepdims=True)]


@register
class Exp(Primitive):
    name = "exp"
    arity = 1

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        with np.errstate(over="ignore"):
            return np.exp(xs[0]), None

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        return [g * out]


@register
class Log(Primitive):
    name = "log"
    arity = 1

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        if np.any(xs[0] <= 0.0):
            raise DomainError("log: input contains non-positive values")
        return np.log(xs[0]), None

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        return [g / xs[0]]


@register
class SumAxis(Primitive):
    name = "sum_axis"
    arity = 1

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        axis = attrs.get("axis")
        if axis is not None:
            axis = _norm_axis(self.name, int(axis), xs[0].ndim)
        return np.asarray(xs[0].sum(axis=axis, keepdims=bool(attrs.get("keepdims")))), None

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        axis = attrs.get("axis")
        if axis is not None:
            axis = _norm_axis(self.name, int(axis), xs[0].ndim)
        return [_expand_reduced(g, xs[0].shape, axis, bool(attrs.get("keepdims")))]


@register
class MeanAxis(Primitive):
    name = "mean_axis"
    arity = 1

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        axis = attrs.get("axis")
        if axis is not None:
            axis = _norm_axis(self.name, int(axis), xs[0].ndim)
        return np.asarray(xs[0].mean(axis=axis, keepdims=bool(attrs.get("keepdims")))), None

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        axis = attrs.get("axis")
        if axis is not None:
            axis = _norm_axis(self.name, int(axis), xs[0].ndim)
        count = xs[0].size if axis is None else xs[0].shape[axis]
        return [_expand_reduced(g, xs[0].shape, axis, bool(attrs.get("keepdims"))) / count]


@register
class ConcatAxis(Primitive):
    name = "concat_axis"

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        if not xs:
            raise DimensionError("concat_axis: no inputs")
        axis = _norm_axis(self.name, int(attrs.get("axis", 0)), xs[0].ndim)
        ref = xs[0].shape[:axis] + xs[0].shape[axis + 1 :]
        for x in xs[1:]:
            if x.ndim != xs[0].ndim or x.shape[:axis] + x.shape[axis + 1 :] != ref:
                raise DimensionError(f"concat_axis: {x.shape} incompatible with {xs[0].shape}")
        return np.concatenate(list(xs), axis=axis), None

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        axis = _norm_axis(self.name, int(attrs.get("axis", 0)), xs[0].ndim)
        cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]
        return list(np.split(g, cuts, axis=axis))


@register
class Reshape(Primitive):
    name = "reshape"
    arity = 1

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        shape = tuple(int(s) for s in attrs["shape"])
        if int(np.prod(shape)) != xs[0].size:
            raise DimensionError(f"reshape: cannot view {xs[0].shape} as {shape}")
        return xs[0].reshape(shape), None

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        return [g.reshape(xs[0].shape)]


@register
class Transpose2(Primitive):
    name = "transpose2"
    arity = 1

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        if xs[0].ndim != 2:
            raise DimensionError(f"transpose2: expected a 2-d input, got {xs[0].shape}")
        return xs[0].T.copy(), None

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        return [g.T.copy()]


@register
class Broadcast(Primitive):
    """Explicit broadcast to a target shape (numpy alignment rules)."""

    name = "broadcast"
    arity = 1

    def forward(self, xs: Sequence[Array], attrs: Attrs) -> Tuple[Array, Any]:
        shape = tuple(int(s) for s in attrs["shape"])
        try:
            return np.broadcast_to(xs[0], shape).copy(), None
        except ValueError:
            raise DimensionError(f"broadcast: cannot broadcast {xs[0].shape} to {shape}") from None

    def backward(
        self, g: Array, xs: Sequence[Array], out: Array, saved: Any, attrs: Attrs
    ) -> List[Optional[Array]]:
        src = xs[0].shape
        lead = g.ndim - len(src)
        grad = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(src) if n == 1 and grad.shape[i] != 1)
        if axes:
            grad = grad.sum(axis=axes, keepdims=True)
        return [grad.reshape(src)]
