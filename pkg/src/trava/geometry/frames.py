"""Differentiable primitive mounting frames and rigid head-pose application.

Frames are built from the anchor face of each primitive: origin at the
barycentric anchor, rotation columns = (UV-aligned tangent, bitangent,
normal), scale proportional to the deformed footprint extent. Everything is
composed from autodiff ops so image losses can move the base mesh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from trava import diffcore as dc
from trava.diffcore import ops

from .layout import PrimitiveLayout, face_uvs
from .mesh import TemplateMesh

# Guard for normalizing near-zero rows. Truly degenerate anchors are patched
# before normalization, so this only needs to prevent 0/0, not bias results:
# it must stay far below the squared norm of any non-flagged face normal.
_EPS = 1e-30


@dataclass
class MountedFrames:
    origin: dc.Tensor  # (P, 3)
    rotation: dc.Tensor  # (P, 3, 3), columns tangent/bitangent/normal
    scale: dc.Tensor  # (P, 3)
    degenerate: np.ndarray  # primitive indices that used the normal fallback


def _col(x, j):
    return ops.narrow(x, 1, j, 1)


def cross3(a, b):
    """Row-wise cross product of (P,3) tensors."""
    ax, ay, az = _col(a, 0), _col(a, 1), _col(a, 2)
    bx, by, bz = _col(b, 0), _col(b, 1), _col(b, 2)
    cx = ops.sub(ops.mul(ay, bz), ops.mul(az, by))
    cy = ops.sub(ops.mul(az, bx), ops.mul(ax, bz))
    cz = ops.sub(ops.mul(ax, by), ops.mul(ay, bx))
    return ops.concat([cx, cy, cz], axis=1)


def _normalize_rows(x):
    n2 = ops.reduce_sum(ops.mul(x, x), axis=1, keepdims=True)
    return ops.div(x, ops.sqrt(ops.add(n2, dc.as_tensor(_EPS, like=x))))


def _row_dot(a, b):
    return ops.reduce_sum(ops.mul(a, b), axis=1, keepdims=True)


def _face_adjacency(mesh: TemplateMesh) -> list:
    """For each face, the faces sharing at least one vertex (excluding it)."""
    incident: dict[int, set] = {}
    for f, tri in enumerate(mesh.triangles):
        for v in tri:
            incident.setdefault(int(v), set()).add(f)
    adj = []
    for f, tri in enumerate(mesh.triangles):
        s = set()
        for v in tri:
            s |= incident[int(v)]
        s.discard(f)
        adj.append(sorted(s))
    return adj


def mount_frames(vertices, mesh: TemplateMesh, layout: PrimitiveLayout,
                 depth_ratio: float = 1.0) -> MountedFrames:
    """Per-primitive frames on deformed vertices (Tensor (N,3) or ndarray).

    Degenerate anchor faces (zero deformed area) fall back to the average
    normal of adjacent faces and are reported in `degenerate`.
    """
    v = dc.as_tensor(vertices)
    tri = mesh.triangles[layout.face_index]  # (P, 3)
    v0 = ops.gather_rows(v, tri[:, 0])
    v1 = ops.gather_rows(v, tri[:, 1])
    v2 = ops.gather_rows(v, tri[:, 2])
    b = layout.bary.astype(v.data.dtype)
    origin = ops.add(ops.add(ops.mul(v0, dc.Tensor(b[:, 0:1])),
                             ops.mul(v1, dc.Tensor(b[:, 1:2]))),
                     ops.mul(v2, dc.Tensor(b[:, 2:3])))

    e1 = ops.sub(v1, v0)
    e2 = ops.sub(v2, v0)
    n_raw = cross3(e1, e2)

    # Detect zero-area anchors numerically and patch their normals with the
    # neighbor average; the patch stays on the tape (linear combination).
    norms = np.linalg.norm(n_raw.data, axis=1)
    flagged = np.flatnonzero(norms < 1e-9)
    if flagged.size:
        adj = _face_adjacency(mesh)
        nb_rows = []
        for k in flagged:
            faces = adj[int(layout.face_index[k])]
            t = mesh.triangles[faces]
            a0 = ops.gather_rows(v, t[:, 0])
            a1 = ops.gather_rows(v, t[:, 1])
            a2 = ops.gather_rows(v, t[:, 2])
            crosses = cross3(ops.sub(a1, a0), ops.sub(a2, a0))
            nb_rows.append(ops.reduce_mean(crosses, axis=0, keepdims=True))
        patch = ops.concat(nb_rows, axis=0)  # (|flagged|, 3)
        keep = np.ones((layout.n_primitives, 1), dtype=v.data.dtype)
        keep[flagged] = 0.0
        scatter = np.zeros((layout.n_primitives, flagged.size), dtype=v.data.dtype)
        scatter[flagged, np.arange(flagged.size)] = 1.0
        n_raw = ops.add(ops.mul(n_raw, dc.Tensor(keep)),
                        ops.matmul(dc.Tensor(scatter), patch))

    n = _normalize_rows(n_raw)
    # UV-aligned tangent from the fixed template parameterization.
    fuv = face_uvs(mesh)[layout.face_index]
    duv1 = fuv[:, 1] - fuv[:, 0]
    duv2 = fuv[:, 2] - fuv[:, 0]
    det = duv1[:, 0] * duv2[:, 1] - duv1[:, 1] * duv2[:, 0]
    safe_det = np.where(np.abs(det) < 1e-15, 1e-15, det)
    c1 = (duv2[:, 1] / safe_det)[:, None].astype(v.data.dtype)
    c2 = (duv1[:, 1] / safe_det)[:, None].astype(v.data.dtype)
    t_raw = ops.sub(ops.mul(e1, dc.Tensor(c1)), ops.mul(e2, dc.Tensor(c2)))
    t_orth = ops.sub(t_raw, ops.mul(n, _row_dot(t_raw, n)))
    t = _normalize_rows(t_orth)
    bt = cross3(n, t)

    def as_column(x):
        return ops.reshape(x, (layout.n_primitives, 3, 1))

    rotation = ops.concat([as_column(t), as_column(bt), as_column(n)], axis=2)

    # Footprint extent: cell UV size mapped through the local area stretch.
    area_world = ops.sqrt(ops.add(ops.reduce_sum(ops.mul(n_raw, n_raw), axis=1,
                                                 keepdims=True),
                                  dc.as_tensor(_EPS, like=v)))
    inv_uv_area = (layout.uv_size / np.sqrt(np.abs(det)))[:, None].astype(v.data.dtype)
    k = ops.mul(ops.sqrt(area_world), dc.Tensor(inv_uv_area))
    ratios = np.array([[1.0, 1.0, depth_ratio]], dtype=v.data.dtype)
    scale = ops.mul(k, dc.Tensor(ratios))
    return MountedFrames(origin, rotation, scale, flagged)


def apply_rigid(base_vertices, delta, rot, trans):
    """v = R (v_hat + delta) + t for (N,3) vertices."""
    vhat = dc.as_tensor(base_vertices)
    v = ops.add(vhat, dc.as_tensor(delta, like=vhat))
    r = dc.as_tensor(rot, like=vhat)
    t = dc.as_tensor(trans, like=vhat)
    rotated = ops.matmul(v, ops.transpose(r, (1, 0)))
    return ops.add(rotated, ops.reshape(t, (1, 3)))
