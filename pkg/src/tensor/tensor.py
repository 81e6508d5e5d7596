"""
Dense float64 tensors with a reverse-mode gradient tape.

Every primitive application on an input that requires gradients is appended
to the calling thread's active :class:`GradTape`. ``backward`` walks the tape
in reverse, returns the gradients of all leaf tensors and clears the tape.
"""

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.exceptions import ContractError, NumericalError
from .primitives import Primitive, get_primitive

Number = Union[int, float]


class Tensor:
    """A dense n-dimensional array of 64-bit reals.

    Tensors hash by identity so they can key gradient maps.
    """

    __slots__ = ("data", "requires_grad", "grad_node", "name", "__weakref__")

    def __init__(
        self,
        data: Any,
        requires_grad: bool = False,
        name: Optional[str] = None,
        *,
        copy: bool = True,
    ) -> None:
        arr = np.array(data, dtype=np.float64) if copy else np.asarray(data, dtype=np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = requires_grad
        self.grad_node: Optional["TapeNode"] = None
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return int(self.data.ndim)

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on a tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, copy=False)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # Operators map onto primitives; numbers use the scalar primitives.
    def __add__(self, other: Union["Tensor", Number]) -> "Tensor":
        if isinstance(other, Tensor):
            return apply_primitive("add", [self, other])
        return apply_primitive("scalar_add", [self], {"value": other})

    __radd__ = __add__

    def __sub__(self, other: Union["Tensor", Number]) -> "Tensor":
        if isinstance(other, Tensor):
            return apply_primitive("sub", [self, other])
        return apply_primitive("scalar_add", [self], {"value": -other})

    def __rsub__(self, other: Number) -> "Tensor":
        return apply_primitive("scalar_add", [-self], {"value": other})

    def __mul__(self, other: Union["Tensor", Number]) -> "Tensor":
        if isinstance(other, Tensor):
            return apply_primitive("mul", [self, other])
        return apply_primitive("scalar_mul", [self], {"value": other})

    __rmul__ = __mul__

    def __truediv__(self, other: Union["Tensor", Number]) -> "Tensor":
        if isinstance(other, Tensor):
            return apply_primitive("div", [self, other])
        return apply_primitive("scalar_mul", [self], {"value": 1.0 / other})

    def __neg__(self) -> "Tensor":
        return apply_primitive("scalar_mul", [self], {"value": -1.0})

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return apply_primitive("matmul", [self, other])

    @property
    def T(self) -> "Tensor":
        return apply_primitive("transpose2", [self])

    def sum(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return apply_primitive("sum_axis", [self], {"axis": axis, "keepdims": keepdims})

    def mean(self, axis: Optional[int] = None, keepdims: bool = False) -> "Tensor":
        return apply_primitive("mean_axis", [self], {"axis": axis, "keepdims": keepdims})

    def reshape(self, *shape: int) -> "Tensor":
        return apply_primitive("reshape", [self], {"shape": shape})


@dataclass(eq=False)
class TapeNode:
    """One recorded primitive application."""

    primitive: Primitive
    inputs: Tuple[Tensor, ...]
    output: Tensor
    saved: Any
    attrs: Mapping[str, Any]
    tape: "GradTape"
    index: int


class GradTape:
    """Ordered record of primitive applications.

    Used as a context manager it becomes the active tape of the current
    thread; otherwise each thread records onto its own default tape.
    """

    def __init__(self) -> None:
        self.nodes: List[TapeNode] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def record(
        self,
        primitive: Primitive,
        inputs: Sequence[Tensor],
        output: Tensor,
        saved: Any,
        attrs: Mapping[str, Any],
    ) -> TapeNode:
        node = TapeNode(primitive, tuple(inputs), output, saved, attrs, self, len(self.nodes))
        self.nodes.append(node)
        return node

    def clear(self) -> None:
        for node in self.nodes:
            node.output.grad_node = None
        self.nodes = []

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type: Any, exc_val: Any, exc_tb: Any) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()


_local = threading.local()


def _tape_stack() -> List[GradTape]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = [GradTape()]
        _local.tapes = stack
    return stack


def current_tape() -> GradTape:
    """The tape new nodes are recorded on in this thread."""
    return _tape_stack()[-1]


def is_grad_enabled() -> bool:
    return bool(getattr(_local, "grad_enabled", True))


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable tape recording in the current thread."""
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


def apply_primitive(
    op: str, inputs: Sequence[Tensor], attrs: Optional[Mapping[str, Any]] = None
) -> Tensor:
    """Apply primitive ``op`` and record it on the tape when gradients are needed."""
    primitive = get_primitive(op)
    attrs = dict(attrs or {})
    arrays = [t.data for t in inputs]
    primitive.check(arrays, attrs)
    out, saved = primitive.forward(arrays, attrs)
    if not np.all(np.isfinite(out)):
        raise NumericalError(f"{op} produced non-finite values")
    needs_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=needs_grad, copy=False)
    if needs_grad:
        result.grad_node = current_tape().record(primitive, inputs, result, saved, attrs)
    return result


GradientMap = Dict[Tensor, Tensor]


def backward(loss: Tensor) -> GradientMap:
    """Reverse-mode sweep from a scalar ``loss``.

    Returns the gradient of every leaf tensor with ``requires_grad`` that the
    loss depends on. The tape holding the loss is cleared afterwards.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    node = loss.grad_node
    if node is None:
        raise ContractError("loss was not recorded on any tape")
    tape = node.tape
    if node.index >= len(tape.nodes) or tape.nodes[node.index] is not node:
        raise ContractError("tape holding this loss was already consumed")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: Dict[int, Tensor] = {}
    for entry in reversed(tape.nodes[: node.index + 1]):
        g = grads.pop(id(entry.output), None)
        if g is None:
            continue
        input_grads = entry.primitive.backward(
            g, [t.data for t in entry.inputs], entry.output.data, entry.saved, entry.attrs
        )
        for tensor, grad in zip(entry.inputs, input_grads):
            if not tensor.requires_grad or grad is None:
                continue
            key = id(tensor)
            grads[key] = grads[key] + grad if key in grads else grad
            if tensor.grad_node is None:
                leaves[key] = tensor
    tape.clear()
    return {tensor: Tensor(grads[key]) for key, tensor in leaves.items()}


def constant(data: Any) -> Tensor:
    """A tensor that never receives gradients."""
    return Tensor(data, requires_grad=False)
