"""Central finite-difference gradient checker."""

from __future__ import annotations

from typing import Callable, List, Sequence

import numpy as np

from .tensor import Tensor, backward


def numeric_grad(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray], index: int,
                 h: float = 1e-4) -> np.ndarray:
    base = [np.array(a, dtype=np.float64) for a in arrays]
    target = base[index]
    grad = np.zeros_like(target)
    flat = target.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        fp = fn(*[Tensor(a) for a in base]).data.item()
        flat[k] = old - h
        fm = fn(*[Tensor(a) for a in base]).data.item()
        flat[k] = old
        gflat[k] = (fp - fm) / (2 * h)
    return grad


def analytic_grad(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> List[np.ndarray]:
    leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    backward(fn(*leaves))
    return [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray],
                    h: float = 1e-4) -> List[float]:
    """Relative error between backward() and central differences, per input.

    ``fn`` maps input tensors to a scalar tensor. Inputs are promoted to
    float64.
    """
    analytic = analytic_grad(fn, arrays)
    return [relative_error(analytic[i], numeric_grad(fn, arrays, i, h)) for i in range(len(arrays))]
