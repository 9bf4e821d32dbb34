"""Graph node type and the reverse-mode sweep.

A :class:`Tensor` is both the numeric value and the autodiff node: it keeps a
reference to the tensors it was computed from and a closure that maps the
gradient of its output to gradients of its parents.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ContractError, NonFiniteError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def _as_array(data) -> np.ndarray:
    if isinstance(data, np.ndarray):
        if data.dtype in (np.float32, np.float64):
            return data
        return data.astype(np.float64)
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """Dense real array that records how it was produced.

    Parameters
    ----------
    data : array_like
        Values. float32 arrays are kept as float32, everything else becomes
        float64.
    requires_grad : bool
        Leaf tensors with ``requires_grad=True`` receive ``.grad`` after
        :func:`backward`.
    name : str, optional
        Used in error messages (e.g. the optimizer names the offending
        parameter).
    """

    __slots__ = ("data", "grad", "op", "parents", "requires_grad", "name", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 op: str = "leaf", parents: Sequence["Tensor"] = (),
                 backward_fn: Optional[BackwardFn] = None):
        arr = _as_array(data)
        if not np.all(np.isfinite(arr)):
            label = name or op
            raise NonFiniteError(f"non-finite value produced by '{label}'")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.op = op
        self.parents = tuple(parents)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._backward = backward_fn

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{tag})"

    # Operator sugar; the implementations live in ops.py.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


def make_node(value: np.ndarray, parents: Sequence[Tensor], op: str,
              backward_fn: BackwardFn) -> Tensor:
    """Wrap an op result; the closure is dropped when no parent needs grads."""
    needs = any(p.requires_grad for p in parents)
    return Tensor(value, requires_grad=needs, op=op,
                  parents=parents if needs else (),
                  backward_fn=backward_fn if needs else None)


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every leaf reachable from a scalar ``loss``.

    Gradients accumulate into existing ``.grad`` arrays, so call
    ``zero_grad`` on parameters between steps.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor with requires_grad")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
