"""Adam with bias-corrected moment estimates."""

from dataclasses import dataclass, field
from typing import Dict, Mapping, MutableMapping, Tuple

import numpy as np

from ..errors import ShapeMismatch


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: MutableMapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: OptimizerState
) -> Tuple[MutableMapping[str, np.ndarray], OptimizerState]:
    """One in-place Adam update of every tensor in ``params``.

    Raises:
        ShapeMismatch: if a gradient is missing or its shape differs from its parameter
    """
    for name, value in params.items():
        if name not in grads or np.shape(grads[name]) != np.shape(value):
            raise ShapeMismatch(f"Gradient for {name} is missing or misshapen")

    state.t += 1
    bias1 = 1.0 - state.beta1**state.t
    bias2 = 1.0 - state.beta2**state.t
    for name, value in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        update = state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        if isinstance(value, np.ndarray):
            value -= update.astype(value.dtype, copy=False)
        else:
            params[name] = value - update
    return params, state
