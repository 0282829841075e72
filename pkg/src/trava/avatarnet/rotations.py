"""Differentiable rotation parameterizations for the pose and transform heads.

Both maps send a zero input to the identity: the 6-vector is offset by the
first two identity columns before Gram-Schmidt, and the axis-angle map's
guarded denominators only touch the removable singularity, so a zero axis
yields I bit for bit (every correction term is multiplied by the zero skew).
"""

from __future__ import annotations

import numpy as np

from trava import diffcore as dc
from trava.diffcore import ops
from trava.geometry.frames import cross3

# Guards 0/0 only; far below any meaningful squared norm.
_EPS = 1e-24


def _normalize_rows(x):
    n2 = ops.reduce_sum(ops.mul(x, x), axis=1, keepdims=True)
    return ops.div(x, ops.sqrt(ops.add(n2, dc.as_tensor(_EPS, like=x))))


def rotation_from_6d(h):
    """SO(3) from a 6-vector: two frame axes through Gram-Schmidt, (3,3) out."""
    h = dc.as_tensor(h)
    if h.shape != (6,):
        raise ValueError(f"rotation_from_6d: expected a 6-vector, got {h.shape}")
    row = ops.reshape(h, (1, 6))
    off1 = dc.as_tensor(np.array([[1.0, 0.0, 0.0]]), like=h)
    off2 = dc.as_tensor(np.array([[0.0, 1.0, 0.0]]), like=h)
    a1 = ops.add(ops.narrow(row, 1, 0, 3), off1)
    a2 = ops.add(ops.narrow(row, 1, 3, 3), off2)
    b1 = _normalize_rows(a1)
    d = ops.reduce_sum(ops.mul(b1, a2), axis=1, keepdims=True)
    b2 = _normalize_rows(ops.sub(a2, ops.mul(b1, d)))
    b3 = cross3(b1, b2)
    cols = [ops.reshape(b, (3, 1)) for b in (b1, b2, b3)]
    return ops.concat(cols, axis=1)


def rotation_from_axis_angle(omega):
    """Rodrigues map for (P,3) axis-angle vectors -> (P,3,3) rotations.

    Written as R = (1 - B*theta^2) I + A*skew + B*omega omega^T with
    A = sin(theta)/theta and B = 2 sin^2(theta/2)/theta^2; the half-angle form
    keeps B accurate near zero where 1-cos cancels catastrophically in
    float32.
    """
    w = dc.as_tensor(omega)
    if w.data.ndim != 2 or w.shape[1] != 3:
        raise ValueError(f"rotation_from_axis_angle: expected (P,3), got {w.shape}")
    p = w.shape[0]
    t2 = ops.reduce_sum(ops.mul(w, w), axis=1, keepdims=True)  # (P,1) exact theta^2
    t2s = ops.add(t2, dc.as_tensor(_EPS, like=w))
    theta = ops.sqrt(t2s)
    a = ops.div(ops.sin(theta), theta)
    sh = ops.sin(ops.scale(theta, 0.5))
    b = ops.div(ops.scale(ops.mul(sh, sh), 2.0), t2s)

    wx = ops.narrow(w, 1, 0, 1)
    wy = ops.narrow(w, 1, 1, 1)
    wz = ops.narrow(w, 1, 2, 1)
    zero = ops.scale(wx, 0.0)

    def _row(c0, c1, c2):
        return ops.reshape(ops.concat([c0, c1, c2], axis=1), (p, 1, 3))

    skew = ops.concat([
        _row(zero, ops.scale(wz, -1.0), wy),
        _row(wz, zero, ops.scale(wx, -1.0)),
        _row(ops.scale(wy, -1.0), wx, zero),
    ], axis=1)
    outer = ops.matmul(ops.reshape(w, (p, 3, 1)), ops.reshape(w, (p, 1, 3)))

    eye = dc.as_tensor(np.eye(3)[None], like=w)
    diag = ops.reshape(ops.sub(dc.as_tensor(1.0, like=w), ops.mul(b, t2)), (p, 1, 1))
    a3 = ops.reshape(a, (p, 1, 1))
    b3 = ops.reshape(b, (p, 1, 1))
    return ops.add(ops.add(ops.mul(eye, diag), ops.mul(skew, a3)),
                   ops.mul(outer, b3))
