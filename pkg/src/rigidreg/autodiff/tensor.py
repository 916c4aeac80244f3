"""Tensor with a recorded computation graph and reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""


class ShapeError(ValueError):
    pass


class Tensor:
    """Dense array plus the node that produced it.

    Leaves are created directly; every primitive returns a new Tensor whose
    ``parents`` are its inputs and whose ``backward_fn`` maps the output
    gradient to one gradient per parent (``None`` where no gradient flows).
    """

    __slots__ = ("data", "grad", "parents", "backward_fn", "op", "name", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None,
                 dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None
        self.op = "leaf"
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dims(self) -> list[int]:
        return list(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape}, dtype={self.dtype})"

    # operator sugar; the functions live in ops
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

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __getitem__(self, key):
        from . import ops
        return ops.index(self, key)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def make_node(op: str, out: np.ndarray, parents: Iterable[Tensor],
              backward_fn: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NonFiniteError(f"{op} produced a non-finite value")
    t = Tensor.__new__(Tensor)
    t.data = out
    t.grad = None
    t.parents = tuple(parents)
    t.op = op
    t.name = None
    t.requires_grad = any(p.requires_grad for p in t.parents)
    t.backward_fn = backward_fn if t.requires_grad else None
    return t


def topological_order(root: Tensor) -> list[Tensor]:
    """Nodes reachable from ``root`` that carry gradients, inputs before users."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    order = topological_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def grad(fn: Callable[..., Tensor], bindings: dict[str, np.ndarray],
         wrt: Optional[Iterable[str]] = None) -> tuple[float, dict[str, np.ndarray]]:
    """Evaluate ``fn(**leaves)`` and return ``(loss, {name: gradient})``.

    ``wrt`` selects which bindings are differentiated (default: all).
    """
    wrt = set(bindings if wrt is None else wrt)
    leaves = {k: Tensor(v, requires_grad=k in wrt, name=k) for k, v in bindings.items()}
    loss = fn(**leaves)
    backward(loss)
    out = {}
    for k in wrt:
        g = leaves[k].grad
        out[k] = np.zeros_like(leaves[k].data) if g is None else g
    return float(loss.data), out
