"""Expression blendshape basis and least-squares projection onto its span."""

from __future__ import annotations

import numpy as np

from trava import diffcore as dc
from trava.diffcore import ops

from .mesh import TemplateMesh


class BlendshapeBasis:
    """51-row basis over flattened vertex positions.

    project() returns the orthogonal projection of v onto the row span,
    i.e. the component of the mesh expressible as a blendshape combination.
    Row-rank deficiency is rejected at construction.
    """

    def __init__(self, basis: np.ndarray):
        b = np.asarray(basis, dtype=np.float64)
        if b.ndim != 2:
            raise ValueError(f"basis must be 2-D, got {b.shape}")
        rank = np.linalg.matrix_rank(b)
        if rank < b.shape[0]:
            raise ValueError(f"blendshape basis is rank-deficient: rank {rank} "
                             f"< {b.shape[0]} rows")
        self.basis = b
        self._gram_inv = np.linalg.inv(b @ b.T)

    @property
    def n_shapes(self) -> int:
        return self.basis.shape[0]

    @property
    def n_coords(self) -> int:
        return self.basis.shape[1]

    def coefficients(self, v) -> np.ndarray:
        """Least-squares blendshape weights for flattened or (N,3) vertices."""
        flat = np.asarray(v, dtype=np.float64).reshape(-1)
        return self._gram_inv @ (self.basis @ flat)

    def project(self, v):
        """v_base for Tensor or ndarray input, matching the input kind."""
        if isinstance(v, dc.Tensor):
            shape = v.shape
            flat = ops.reshape(v, (self.n_coords,))
            bt = dc.Tensor(self.basis.astype(v.data.dtype))
            gi = dc.Tensor(self._gram_inv.astype(v.data.dtype))
            coeff = ops.matmul(gi, ops.matmul(bt, flat))
            return ops.reshape(ops.matmul(ops.transpose(bt, (1, 0)), coeff), shape)
        arr = np.asarray(v, dtype=np.float64)
        flat = arr.reshape(-1)
        out = self.basis.T @ (self._gram_inv @ (self.basis @ flat))
        return out.reshape(arr.shape)


def build_blendshape_basis(mesh: TemplateMesh, n_shapes: int = 51,
                           seed: int = 0) -> BlendshapeBasis:
    """Synthesized desk-scale basis: neutral shape plus smooth bump fields.

    Row 0 is the flattened neutral mesh so the projection can represent the
    resting pose; rows 1-3 are per-axis constant fields so the span absorbs
    global translation (a shifted mesh projects onto its shifted self and
    the Laplacian residual ignores rigid drift); the remaining rows are
    seeded low-frequency Gaussian-bump displacement fields over the surface.
    """
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    n = mesh.n_vertices
    rows = [mesh.vertices.reshape(-1)]
    rows += [np.tile(np.eye(3)[axis], n) for axis in range(3)]
    center = mesh.vertices.mean(axis=0)
    scale = np.linalg.norm(mesh.vertices - center, axis=1).mean()
    for _ in range(n_shapes - 4):
        disp = np.zeros((n, 3))
        for _ in range(3):
            c = mesh.vertices[rng.integers(n)]
            sigma = scale * rng.uniform(0.25, 0.6)
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            amp = scale * rng.uniform(0.05, 0.15)
            d2 = ((mesh.vertices - c) ** 2).sum(axis=1)
            disp += amp * np.exp(-d2 / (2 * sigma * sigma))[:, None] * direction
        rows.append(disp.reshape(-1))
    return BlendshapeBasis(np.stack(rows))
