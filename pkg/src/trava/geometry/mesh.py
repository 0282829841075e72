"""Template mesh, a procedural sphere generator, OBJ subset I/O."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class TemplateMesh:
    vertices: np.ndarray  # (N, 3) float64, meters
    triangles: np.ndarray  # (F, 3) int vertex indices
    uv: np.ndarray  # (N, 2) float64 in [0,1]^2
    weight_mask: np.ndarray  # (N,) per-vertex regularization weight

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.triangles = np.asarray(self.triangles, dtype=np.int64)
        self.uv = np.asarray(self.uv, dtype=np.float64)
        self.weight_mask = np.asarray(self.weight_mask, dtype=np.float64)
        n = self.vertices.shape[0]
        if self.uv.shape != (n, 2) or self.weight_mask.shape != (n,):
            raise ValueError("uv/weight_mask sizes do not match vertex count")
        if self.triangles.min() < 0 or self.triangles.max() >= n:
            raise ValueError("triangle indices out of range")
        # Every vertex needs at least one neighbor for the Laplacian.
        used = np.zeros(n, dtype=bool)
        used[self.triangles.ravel()] = True
        if not used.all():
            raise ValueError(f"{(~used).sum()} isolated vertices have no incident face")

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_faces(self) -> int:
        return self.triangles.shape[0]


def default_weight_mask(vertices: np.ndarray, facial_weight: float = 1.0,
                        other_weight: float = 0.1) -> np.ndarray:
    """Frontal cap (z toward the cameras) counts as the facial region."""
    v = np.asarray(vertices, dtype=np.float64)
    center = v.mean(axis=0)
    r = np.linalg.norm(v - center, axis=1).mean()
    facial = (v[:, 2] - center[2]) > 0.2 * r
    return np.where(facial, facial_weight, other_weight)


def make_template_sphere(n_lon: int = 31, n_lat: int = 33,
                         radius: float = 0.11) -> TemplateMesh:
    """UV sphere: (n_lat-1)*(n_lon+1) ring vertices plus two poles.

    The longitude seam column is duplicated (u=0 and u=1 carry coincident
    positions) so every face has a contiguous UV footprint and no atlas
    wrap handling is needed downstream. Default 31x33 gives 1026 vertices
    (head-sized, 11 cm radius); n_lon=87, n_lat=84 gives the full-scale
    7306.
    """
    if n_lon < 3 or n_lat < 3:
        raise ValueError("sphere resolution too small")
    verts = [(0.0, radius, 0.0)]
    uvs = [(0.5, 0.0)]
    for i in range(1, n_lat):
        theta = np.pi * i / n_lat  # 0 at +y pole
        for j in range(n_lon + 1):
            phi = 2 * np.pi * (j % n_lon) / n_lon
            x = radius * np.sin(theta) * np.sin(phi)
            y = radius * np.cos(theta)
            z = radius * np.sin(theta) * np.cos(phi)
            verts.append((x, y, z))
            uvs.append((j / n_lon, i / n_lat))
    verts.append((0.0, -radius, 0.0))
    uvs.append((0.5, 1.0))
    bottom = len(verts) - 1

    def ring(i, j):
        return 1 + (i - 1) * (n_lon + 1) + j

    tris = []
    for j in range(n_lon):
        tris.append((0, ring(1, j), ring(1, j + 1)))
    for i in range(1, n_lat - 1):
        for j in range(n_lon):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            tris.append((a, c, d))
            tris.append((a, d, b))
    for j in range(n_lon):
        tris.append((bottom, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)))
    v = np.asarray(verts)
    return TemplateMesh(v, np.asarray(tris), np.asarray(uvs), default_weight_mask(v))


def load_obj(path) -> TemplateMesh:
    """OBJ subset: v, vt, f with 1-based i, i/j, i/j/k or i//k references."""
    verts, uvs, faces = [], [], []
    uv_of_vertex: dict[int, int] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif tag == "vt":
                uvs.append([float(x) for x in parts[1:3]])
            elif tag == "f":
                if len(parts) != 4:
                    raise ValueError(f"OBJ line {lineno}: only triangles supported")
                tri = []
                for token in parts[1:]:
                    fields = token.split("/")
                    vi = int(fields[0]) - 1
                    tri.append(vi)
                    if len(fields) > 1 and fields[1]:
                        uv_of_vertex[vi] = int(fields[1]) - 1
                faces.append(tri)
            # Other tags (vn, o, g, s, usemtl, mtllib) are ignored.
    v = np.asarray(verts, dtype=np.float64)
    if uvs:
        uv = np.zeros((len(verts), 2))
        for vi, ti in uv_of_vertex.items():
            uv[vi] = uvs[ti]
    else:
        uv = np.zeros((len(verts), 2))
    return TemplateMesh(v, np.asarray(faces), uv, default_weight_mask(v))


def save_obj(path, mesh: TemplateMesh) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in mesh.vertices:
            f.write(f"v {p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")
        for t in mesh.uv:
            f.write(f"vt {t[0]:.9g} {t[1]:.9g}\n")
        for tri in mesh.triangles:
            a, b, c = tri + 1
            f.write(f"f {a}/{a} {b}/{b} {c}/{c}\n")
