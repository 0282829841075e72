"""Uniform graph Laplacian over the template topology and its loss."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from trava import diffcore as dc
from trava.diffcore import ops

from .mesh import TemplateMesh


def build_laplacian(mesh: TemplateMesh, dtype=np.float64) -> dc.CsrMatrix:
    """L = D - A on the edge graph: row sums zero, symmetric pattern."""
    tri = mesh.triangles
    edges = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    i = np.concatenate([edges[:, 0], edges[:, 1]])
    j = np.concatenate([edges[:, 1], edges[:, 0]])
    n = mesh.n_vertices
    a = sp.coo_matrix((np.ones(i.size), (i, j)), shape=(n, n)).tocsr()
    a.data[:] = 1.0  # binarize: duplicate edge entries were summed by tocsr
    deg = np.asarray(a.sum(axis=1)).ravel()
    lap = sp.diags(deg) - a
    return dc.CsrMatrix(lap.astype(dtype))


def laplacian_loss(v, v_base, lap: dc.CsrMatrix, weight_mask: np.ndarray):
    """Sum_i w_i * |(L (v - v_base))_i|^2 over (N,3) vertex tensors."""
    if isinstance(v, dc.Tensor) or isinstance(v_base, dc.Tensor):
        v = dc.as_tensor(v)
        diff = ops.sub(v, dc.as_tensor(v_base, like=v))
        ld = ops.sparse_matmul(diff, lap)
        w = dc.Tensor(np.asarray(weight_mask, dtype=v.data.dtype)[:, None])
        return ops.reduce_sum(ops.mul(w, ops.mul(ld, ld)))
    ld = lap.dot(np.asarray(v) - np.asarray(v_base))
    return float((np.asarray(weight_mask)[:, None] * ld * ld).sum())
