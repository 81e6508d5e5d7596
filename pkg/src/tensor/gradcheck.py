"""Central finite-difference checking of tape gradients."""

from typing import Callable

import numpy as np

from ..core.exceptions import ContractError
from .tensor import GradTape, Tensor, backward, no_grad


def finite_diff_check(
    f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-6, floor: float = 1e-12
) -> float:
    """Max relative error between tape and central-difference gradients of ``f`` at ``x``.

    Error per coordinate is ``|auto - numeric| / (|numeric| + floor)``.
    """
    if not eps > 0.0:
        raise ContractError(f"finite-difference step must be positive, got {eps}")

    leaf = Tensor(x.data, requires_grad=True)
    with GradTape():
        loss = f(leaf)
        if loss.grad_node is None:
            auto = np.zeros_like(leaf.data)
        else:
            auto = backward(loss).get(leaf, Tensor(np.zeros_like(leaf.data))).data

    base = np.array(x.data, dtype=np.float64)
    flat = base.reshape(-1)
    numeric = np.zeros_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = f(Tensor(base)).item()
            flat[i] = orig - eps
            down = f(Tensor(base)).item()
            flat[i] = orig
            numeric[i] = (up - down) / (2.0 * eps)

    err = np.abs(auto.reshape(-1) - numeric) / (np.abs(numeric) + floor)
    return float(err.max()) if err.size else 0.0
