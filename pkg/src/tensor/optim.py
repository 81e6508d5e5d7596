"""
AdamW with decoupled weight decay over named parameter dictionaries.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple, Union

import numpy as np

from ..core.exceptions import ContractError, NumericalError
from .tensor import Tensor

logger = logging.getLogger(__name__)

GradLike = Union[Tensor, np.ndarray]


@dataclass
class AdamWState:
    """Optimizer moments and hyperparameters."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(
        cls,
        params: Mapping[str, Tensor],
        lr: float = 1e-4,
        weight_decay: float = 0.05,
        **kwargs: float,
    ) -> "AdamWState":
        """Zero-initialised moments matching ``params``."""
        return cls(
            lr=lr,
            weight_decay=weight_decay,
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
            **kwargs,  # type: ignore[arg-type]
        )


def _as_array(grad: GradLike) -> np.ndarray:
    return grad.data if isinstance(grad, Tensor) else np.asarray(grad, dtype=np.float64)


def adamw_step(
    params: Mapping[str, Tensor], grads: Mapping[str, GradLike], state: AdamWState
) -> Tuple[Mapping[str, Tensor], AdamWState]:
    """One AdamW update.

    Parameters are updated by rebinding ``Tensor.data`` to new arrays, so
    views taken before the step keep their old values.
    """
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ContractError("params, grads and optimizer state must share the same keys")

    arrays = {}
    for name, grad in grads.items():
        g = _as_array(grad)
        if g.shape != params[name].shape:
            raise ContractError(
                f"gradient for '{name}' has shape {g.shape}, parameter has {params[name].shape}"
            )
        if not np.all(np.isfinite(g)):
            bad = int(np.count_nonzero(~np.isfinite(g)))
            raise NumericalError(
                f"non-finite gradient for '{name}': {bad}/{g.size} entries, step {state.t + 1}"
            )
        arrays[name] = g

    state.t += 1
    bias1 = 1.0 - state.beta1**state.t
    bias2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = arrays[name]
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / bias1
        v_hat = state.v[name] / bias2
        decayed = p.data * (1.0 - state.lr * state.weight_decay)
        p.data = decayed - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    logger.debug(f"AdamW step {state.t} over {len(params)} parameters")
    return params, state
