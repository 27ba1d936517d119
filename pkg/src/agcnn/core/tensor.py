"""Double precision tensor with a recorded graph for reverse-mode differentiation.

Every differentiable operation produces a :class:`Tensor` whose ``_node`` holds
the parent tensors and a vector-Jacobian product closure.  Gradients are
computed by :func:`grad` (functional, returns arrays) or
:meth:`Tensor.backward` (accumulates into ``.grad`` of the leaves).

Two backward modes exist.  ``"standard"`` is exact reverse-mode
differentiation.  ``"guided"`` differs only at rectifier nodes, where the
incoming gradient is additionally zeroed wherever it is negative.
"""

from __future__ import annotations

from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from agcnn.errors import UsageError

STANDARD = "standard"
GUIDED = "guided"
MODES = (STANDARD, GUIDED)

# vjp(grad_out, needs) -> tuple of parent gradients (None where not needed)
Vjp = Callable[[np.ndarray, Sequence[bool]], Sequence[Optional[np.ndarray]]]


class _Node:
    __slots__ = ("parents", "vjp", "op", "rectifier")

    def __init__(self, parents, vjp, op, rectifier):
        self.parents = parents
        self.vjp = vjp
        self.op = op
        self.rectifier = rectifier


class Tensor:
    """An N-d float64 array plus optional gradient and provenance record."""

    __slots__ = ("data", "grad", "requires_grad", "_node", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._node: Optional[_Node] = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def op(self) -> str:
        return self._node.op if self._node is not None else "leaf"

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # arithmetic sugar, all routed through the functional ops
    def __add__(self, other):
        from agcnn.core import functional as F
        return F.add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        from agcnn.core import functional as F
        return F.mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        from agcnn.core import functional as F
        return F.sub(self, other)

    def __rsub__(self, other):
        from agcnn.core import functional as F
        return F.sub(other, self)

    def __neg__(self):
        from agcnn.core import functional as F
        return F.mul(self, -1.0)

    def __truediv__(self, other):
        from agcnn.core import functional as F
        return F.div(self, other)

    def sum(self):
        from agcnn.core import functional as F
        return F.sum(self)

    def mean(self):
        from agcnn.core import functional as F
        return F.mean(self)

    def reshape(self, *shape):
        from agcnn.core import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def backward(self, mode: str = STANDARD) -> None:
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf requiring grad."""
        if self.data.size != 1:
            raise UsageError(f"backward() needs a scalar root, got shape {self.shape}")
        leaves = [t for t in _topo_order(self) if t._node is None and t.requires_grad]
        grads = grad(self, leaves, mode=mode)
        for leaf, g in zip(leaves, grads):
            leaf.grad = g if leaf.grad is None else leaf.grad + g


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(
    data: np.ndarray,
    parents: Sequence[Tensor],
    vjp: Vjp,
    op: str,
    rectifier: bool = False,
) -> Tensor:
    """Wrap ``data`` as the output of an op; the graph is recorded only if needed."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._node = _Node(tuple(parents), vjp, op, rectifier)
    return out


def _topo_order(root: Tensor) -> list:
    """Parents-before-children order of the graph under ``root`` (iterative DFS)."""
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t._node is not None:
            for p in t._node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def grad(
    root: Tensor,
    wrt: Iterable[Tensor],
    mode: str = STANDARD,
    seed: Optional[np.ndarray] = None,
) -> list:
    """Return d(root)/d(t) for each ``t`` in ``wrt`` as numpy arrays.

    A non-scalar root needs an explicit ``seed`` (the upstream gradient).
    Tensors in ``wrt`` that ``root`` does not depend on get zero gradients.
    Only the part of the graph that connects ``root`` to ``wrt`` is traversed.
    """
    if mode not in MODES:
        raise UsageError(f"unknown backprop mode {mode!r}; expected one of {MODES}")
    wrt = list(wrt)
    if seed is None:
        if root.data.size != 1:
            raise UsageError(f"gradient of non-scalar root (shape {root.shape}) needs a seed")
        seed = np.ones_like(root.data)
    else:
        seed = np.asarray(seed, dtype=np.float64)
        if seed.shape != root.shape:
            raise UsageError(f"seed shape {seed.shape} != root shape {root.shape}")

    targets = {id(t) for t in wrt}
    order = _topo_order(root) if root.requires_grad else []
    relevant = set()
    for t in order:
        if id(t) in targets or (
            t._node is not None and any(id(p) in relevant for p in t._node.parents)
        ):
            relevant.add(id(t))

    grads = {id(root): seed} if id(root) in relevant else {}
    guided = mode == GUIDED
    for t in reversed(order):
        g = grads.get(id(t))
        if g is None or t._node is None:
            continue
        node = t._node
        if guided and node.rectifier:
            g = np.where(g > 0, g, 0.0)
        needs = [id(p) in relevant for p in node.parents]
        pgrads = node.vjp(g, needs)
        for p, need, pg in zip(node.parents, needs, pgrads):
            if not need or pg is None:
                continue
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg
        if id(t) not in targets:
            del grads[id(t)]

    return [grads.get(id(t), np.zeros_like(t.data)) for t in wrt]
