"""Dense-tensor reverse-mode autodiff on numpy arrays.

A Tensor wraps a float32/float64 ndarray. Operations (see ops.py) record a
DAG of nodes; backward() topologically sorts the DAG from a scalar loss and
accumulates gradients additively across fan-out. Tracing can be suspended
with no_grad() for inference-speed forward passes.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Suspend graph recording inside the context."""
    prev = grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """Dense value with optional gradient and provenance in the op DAG.

    Attributes:
        data: row-major ndarray, float32 or float64.
        requires_grad: participate in backward().
        grad: ndarray of the same shape, populated by backward().
        op: name of the producing operation ("" for leaves).
        parents: input tensors of the producing operation.
        meta: op-specific annotations (e.g. has_bias for fc/conv nodes),
            used by structural audits.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "parents", "_backward", "meta")

    def __init__(self, data, requires_grad=False, op="", parents=(), backward=None, meta=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64 if arr.dtype == np.int64 else np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = op
        self.parents = tuple(parents)
        self._backward = backward
        self.meta = meta or {}

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" op={self.op}" if self.op else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{tag})"

    # Convenience arithmetic delegates to ops; imported lazily to avoid a cycle.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.reduce_mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    """Lift ndarray/scalar to a constant Tensor, matching `like`'s dtype.

    Floating arrays keep their own dtype when no `like` is given; anything
    else defaults to float32.
    """
    if isinstance(x, Tensor):
        return x
    if like is not None:
        dtype = like.data.dtype
    else:
        arr = np.asarray(x)
        dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def make_node(out_data, parents, op, backward, meta=None) -> Tensor:
    """Create an op-output tensor, recording provenance only while tracing."""
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    needs = grad_enabled() and any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(out_data, requires_grad=False, op=op, meta=meta)
    return Tensor(out_data, requires_grad=True, op=op, parents=parents,
                  backward=backward, meta=meta)


def topo_order(root: Tensor) -> list[Tensor]:
    """Tensors reachable from root, parents before children (iterative DFS)."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss; grads accumulate across fan-out."""
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor with requires_grad")
    order = topo_order(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is not None:
            parent_grads = node._backward(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else acc + pg
        if not node.parents and node.requires_grad:
            # Leaf parameter: expose the accumulated gradient.
            node.grad = g if node.grad is None else node.grad + g
        elif node.parents and node.requires_grad and node._backward is None:
            raise RuntimeError(f"node '{node.op}' has parents but no backward rule")


def depends_on(root: Tensor, target: Tensor) -> dict[int, bool]:
    """Map id(tensor) -> whether it transitively depends on `target`.

    Used by the linear-path structural audit to identify every node on the
    lighting pathway.
    """
    flags: dict[int, bool] = {}
    for node in topo_order(root):
        if node is target:
            flags[id(node)] = True
        else:
            flags[id(node)] = any(flags.get(id(p), False) for p in node.parents)
    return flags
