"""Primitive layout: a square grid of UV cells anchored onto mesh faces."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import TemplateMesh


@dataclass
class PrimitiveLayout:
    face_index: np.ndarray  # (P,) anchor face per primitive
    bary: np.ndarray  # (P, 3) barycentric anchor inside that face
    uv_center: np.ndarray  # (P, 2) cell centers
    uv_size: float  # cell edge length (cells tile the UV square)
    grid_dim: int
    m: int  # voxel grid resolution per primitive axis
    snapped: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_primitives(self) -> int:
        return self.face_index.shape[0]


def face_uvs(mesh: TemplateMesh) -> np.ndarray:
    """(F, 3, 2) per-corner UVs (atlases carry no wraps: seams duplicated)."""
    return mesh.uv[mesh.triangles]


def build_layout(mesh: TemplateMesh, n_prim: int = 256, m: int = 8) -> PrimitiveLayout:
    """Tile the UV square with ceil(sqrt(n_prim))^2 cells; anchor the first
    n_prim cell centers in raster order.

    Square counts cover the whole atlas; other counts (tiny debug models)
    leave the tail of the last rows unanchored. A cell whose center lies in
    no UV triangle (atlas gaps near the poles) snaps to the face with the
    nearest UV centroid and is recorded in `snapped`.
    """
    if n_prim < 1:
        raise ValueError(f"n_prim must be positive, got {n_prim}")
    g = math.isqrt(n_prim)
    if g * g != n_prim:
        g += 1
    if m < 2:
        raise ValueError(f"grid resolution m must be >= 2, got {m}")
    fuv = face_uvs(mesh)
    p0 = fuv[:, 0]  # (F,2)
    e1 = fuv[:, 1] - fuv[:, 0]
    e2 = fuv[:, 2] - fuv[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    ok = np.abs(det) > 1e-15
    centroids = fuv.mean(axis=1)

    centers = np.stack(np.meshgrid((np.arange(g) + 0.5) / g, (np.arange(g) + 0.5) / g,
                                   indexing="xy"), axis=-1).reshape(-1, 2)[:n_prim]
    face_index = np.empty(len(centers), dtype=np.int64)
    bary = np.empty((len(centers), 3))
    snapped = []
    for k, (u, v) in enumerate(centers):
        du = u - p0[:, 0]
        dv = v - p0[:, 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            b1 = (du * e2[:, 1] - dv * e2[:, 0]) / det
            b2 = (dv * e1[:, 0] - du * e1[:, 1]) / det
        b0 = 1.0 - b1 - b2
        inside = ok & (b0 >= -1e-9) & (b1 >= -1e-9) & (b2 >= -1e-9)
        hits = np.flatnonzero(inside)
        if hits.size:
            f = int(hits[0])
            face_index[k] = f
            bary[k] = np.clip([b0[f], b1[f], b2[f]], 0.0, 1.0)
            bary[k] /= bary[k].sum()
        else:
            d = ((centroids - [u, v]) ** 2).sum(axis=1)
            d[~ok] = np.inf
            f = int(np.argmin(d))
            face_index[k] = f
            bary[k] = (1 / 3, 1 / 3, 1 / 3)
            snapped.append(k)
    return PrimitiveLayout(face_index, bary, centers, 1.0 / g, g, m,
                           np.asarray(snapped, dtype=np.int64))
