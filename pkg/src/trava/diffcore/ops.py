"""Operation set for the autodiff engine.

Pointwise ops broadcast like numpy and un-broadcast their gradients by
summation. Shape errors are raised eagerly with the offending shapes named.
clamp passes gradient only strictly inside its bounds; leaky_relu defaults
to slope 0.2.
"""

from __future__ import annotations

import numpy as np

from . import convkernels as ck
from .tensor import Tensor, as_tensor, make_node


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_same_shape(op, a, b):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# pointwise

def add(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_same_shape("add", a, b)
    out = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(out, (a, b), "add", bwd)


def sub(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_same_shape("sub", a, b)
    out = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(out, (a, b), "sub", bwd)


def mul(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_same_shape("mul", a, b)
    out = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_node(out, (a, b), "mul", bwd)


def div(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    _check_same_shape("div", a, b)
    out = a.data / b.data

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        # -g*a/b^2 via the forward quotient: b*b underflows float32 for
        # tiny guarded denominators even when the quotient is well scaled.
        gb = _unbroadcast(-g * out / b.data, b.shape)
        return ga, gb

    return make_node(out, (a, b), "div", bwd)


def scale(x, k: float):
    x = as_tensor(x)
    k = float(k)
    out = x.data * x.data.dtype.type(k)

    def bwd(g):
        return (g * x.data.dtype.type(k),)

    return make_node(out, (x,), "scale", bwd, meta={"k": k})


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)

    def bwd(g):
        return (g * out,)

    return make_node(out, (x,), "exp", bwd)


def log(x):
    x = as_tensor(x)
    out = np.log(x.data)

    def bwd(g):
        return (g / x.data,)

    return make_node(out, (x,), "log", bwd)


def sqrt(x):
    """Square root; subgradient 0 where x == 0."""
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def bwd(g):
        denom = 2.0 * out
        gx = np.where(denom > 0, g / np.where(denom > 0, denom, 1.0), 0.0)
        return (gx.astype(x.data.dtype, copy=False),)

    return make_node(out, (x,), "sqrt", bwd)


def sin(x):
    x = as_tensor(x)
    out = np.sin(x.data)

    def bwd(g):
        return (g * np.cos(x.data),)

    return make_node(out, (x,), "sin", bwd)


def cos(x):
    x = as_tensor(x)
    out = np.cos(x.data)

    def bwd(g):
        return (-g * np.sin(x.data),)

    return make_node(out, (x,), "cos", bwd)


def absolute(x):
    """|x|; subgradient 0 at x == 0."""
    x = as_tensor(x)
    out = np.abs(x.data)

    def bwd(g):
        return (g * np.sign(x.data),)

    return make_node(out, (x,), "abs", bwd)


def leaky_relu(x, slope: float = 0.2):
    x = as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, x.data * x.data.dtype.type(slope))

    def bwd(g):
        return (np.where(mask, g, g * x.data.dtype.type(slope)),)

    return make_node(out, (x,), "leaky_relu", bwd, meta={"slope": slope})


def softplus(x):
    """log(1 + e^x), computed stably."""
    x = as_tensor(x)
    out = np.maximum(x.data, 0) + np.log1p(np.exp(-np.abs(x.data)))

    def bwd(g):
        sig = 1.0 / (1.0 + np.exp(-x.data))
        return (g * sig,)

    return make_node(out, (x,), "softplus", bwd)


def clamp(x, lo: float, hi: float):
    """Clamp to [lo, hi]; gradient passes only strictly inside the bounds."""
    x = as_tensor(x)
    out = np.clip(x.data, lo, hi)
    inside = (x.data > lo) & (x.data < hi)

    def bwd(g):
        return (np.where(inside, g, 0.0).astype(x.data.dtype, copy=False),)

    return make_node(out, (x,), "clamp", bwd, meta={"lo": lo, "hi": hi})


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    """Batched matrix multiply; 1-D operands follow numpy's vector rules."""
    a = as_tensor(a)
    b = as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise ValueError(f"matmul: inner dims disagree {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)
    a2 = a.data[None, :] if a.data.ndim == 1 else a.data
    b2 = b.data[:, None] if b.data.ndim == 1 else b.data

    def bwd(g):
        if a.data.ndim == 1 and b.data.ndim == 1:
            return g * b.data, g * a.data
        g2 = g
        if a.data.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if b.data.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = np.matmul(g2, b2.swapaxes(-1, -2))
        gb = np.matmul(a2.swapaxes(-1, -2), g2)
        if a.data.ndim == 1:
            ga = ga.reshape(ga.shape[:-2] + (ga.shape[-1],))
        if b.data.ndim == 1:
            gb = gb.reshape(gb.shape[:-2] + (gb.shape[-2],))
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_node(out, (a, b), "matmul", bwd)


def fc(x, w, b=None):
    """Fully-connected layer: x @ w.T (+ b). w is (out, in)."""
    x = as_tensor(x)
    w = as_tensor(w)
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"fc: input dim {x.shape} does not match weight {w.shape}")
    out = np.matmul(x.data, w.data.T)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ValueError(f"fc: bias shape {b.shape} does not match weight {w.shape}")
        out = out + b.data

    def bwd(g):
        gx = np.matmul(g, w.data)
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.shape[-1])
        gw = np.matmul(g2.T, x2)
        if b is not None:
            return gx, gw, g2.sum(axis=0)
        return gx, gw

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, "fc", bwd, meta={"has_bias": b is not None})


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0):
    """2D convolution. x (N,Cin,H,W); w (Cout,Cin,kh,kw)."""
    x = as_tensor(x)
    w = as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ValueError(f"conv2d: incompatible shapes x{x.shape} w{w.shape}")
    out, cols = ck.conv2d_forward(x.data, w.data, stride, pad)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ValueError(f"conv2d: bias shape {b.shape} vs weight {w.shape}")
        out = out + b.data[None, :, None, None]

    def bwd(g):
        gx, gw = ck.conv2d_backward(g, x.shape, w.data, cols, stride, pad)
        if b is not None:
            return gx, gw, g.sum(axis=(0, 2, 3))
        return gx, gw

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, "conv2d", bwd,
                     meta={"has_bias": b is not None, "stride": stride, "pad": pad})


def conv_transpose2d(x, w, b=None, stride: int = 1, pad: int = 0):
    """2D transposed convolution. x (N,Cin,H,W); w (Cin,Cout,kh,kw)."""
    x = as_tensor(x)
    w = as_tensor(w)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[0]:
        raise ValueError(f"conv_transpose2d: incompatible shapes x{x.shape} w{w.shape}")
    out = ck.conv_transpose2d_forward(x.data, w.data, stride, pad)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ValueError(f"conv_transpose2d: bias shape {b.shape} vs weight {w.shape}")
        out = out + b.data[None, :, None, None]

    def bwd(g):
        gx, gw = ck.conv_transpose2d_backward(g, x.data, w.data, stride, pad)
        if b is not None:
            return gx, gw, g.sum(axis=(0, 2, 3))
        return gx, gw

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, "conv_transpose2d", bwd,
                     meta={"has_bias": b is not None, "stride": stride, "pad": pad})


# ---------------------------------------------------------------------------
# shape ops

def reshape(x, shape):
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def bwd(g):
        return (g.reshape(x.shape),)

    return make_node(out, (x,), "reshape", bwd)


def transpose(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    out = np.transpose(x.data, axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        return (np.transpose(g, inv),)

    return make_node(out, (x,), "transpose", bwd)


def concat(tensors, axis: int = 0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_node(out, tuple(tensors), "concat", bwd)


def narrow(x, axis: int, start: int, length: int):
    """Contiguous slice of `length` entries along `axis`."""
    x = as_tensor(x)
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = x.data[idx]

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return make_node(out, (x,), "slice", bwd)


def gather_rows(x, index):
    """Select rows x[index] along axis 0; backward scatter-adds."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    out = x.data[index]

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return make_node(out, (x,), "gather_rows", bwd)


# ---------------------------------------------------------------------------
# reductions

def reduce_sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).astype(x.data.dtype, copy=True),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, x.shape).astype(x.data.dtype, copy=True),)

    return make_node(out, (x,), "reduce_sum", bwd)


def reduce_mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    if axis is None:
        count = x.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([x.shape[a] for a in axes]))

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / count, x.shape).astype(x.data.dtype, copy=True),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, x.shape).astype(x.data.dtype, copy=True),)

    return make_node(out, (x,), "reduce_mean", bwd)


# ---------------------------------------------------------------------------
# sparse

def sparse_matmul(x, sp):
    """y = L @ x for a fixed sparse matrix (see sparse.CsrMatrix)."""
    x = as_tensor(x)
    out = sp.dot(x.data)

    def bwd(g):
        return (sp.t_dot(g),)

    return make_node(out, (x,), "sparse_matmul", bwd)
