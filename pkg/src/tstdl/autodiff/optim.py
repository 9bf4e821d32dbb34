"""SGD and Adam over named parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Mapping

import numpy as np

from ..errors import DimensionError, NonFiniteError, ParameterError
from .tensor import Tensor


@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ParameterError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ParameterError("learning rate must be positive")


def sgd(learning_rate: float = 0.01) -> OptimizerState:
    return OptimizerState(kind="sgd", learning_rate=learning_rate)


def adam(learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
         epsilon: float = 1e-8) -> OptimizerState:
    return OptimizerState(kind="adam", learning_rate=learning_rate, beta1=beta1,
                          beta2=beta2, epsilon=epsilon)


def optimizer_step(state: OptimizerState, params: Mapping[str, Tensor]) -> None:
    """Apply one update in place to every parameter that has a gradient.

    Raises :class:`NonFiniteError` naming the parameter when a gradient
    contains NaN or Inf; nothing is updated in that case.
    """
    live = {name: p for name, p in params.items() if p.grad is not None}
    for name, p in live.items():
        if p.grad.shape != p.data.shape:
            raise DimensionError(f"gradient of '{name}' has shape {p.grad.shape}, expected {p.shape}")
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"non-finite gradient for parameter '{name}'")
    state.step_count += 1
    lr = state.learning_rate
    if state.kind == "sgd":
        for p in live.values():
            p.data -= (lr * p.grad).astype(p.dtype, copy=False)
        return
    b1, b2, t = state.beta1, state.beta2, state.step_count
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for name, p in live.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        step = lr * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)
        p.data -= step.astype(p.dtype, copy=False)
