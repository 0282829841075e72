"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor wraps an ndarray and remembers the op that produced it; backward()
walks the recorded graph once in reverse topological order, accumulating
gradients additively across fan-out. Training runs in float32; gradient
checks swap everything to float64.
"""

from . import ops
from .adam import Adam
from .sparse import CsrMatrix
from .tensor import Tensor, as_tensor, backward, depends_on, grad_enabled, no_grad, topo_order

__all__ = [
    "Adam",
    "CsrMatrix",
    "Tensor",
    "as_tensor",
    "backward",
    "depends_on",
    "grad_enabled",
    "no_grad",
    "ops",
    "topo_order",
]
