"""Synthetic capture subject: a star-shaped blob shaded analytically.

The surface is radial, r(u) = R * (1 + static bumps + weighted expression
bumps), with every bump a positive von Mises-Fisher lobe, so the radius
never drops below R and the geometry cannot degenerate. Rays are cast
against the exact surface (coarse bracket, then bisection to double
precision); shading is Lambertian plus Blinn specular summed over rig
lights, no shadows or interreflection. Direct illumination makes every
image a fixed per-pixel kernel times the light vector, which is the
ground-truth analogue of the appearance decoder's linear light response.

mesh_at() samples the same radial field on the template-sphere topology.
It exists for geometric checks and first-frame alignment; images always
come from the exact surface, never from the mesh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from trava.geometry import TemplateMesh, make_template_sphere
from trava.lightkit import LightingCondition, LightRig
from trava.renderer import Camera

N_COARSE = 64  # bracket samples per ray; features are far wider than this
N_BISECT = 52  # halvings: bracket width / 2^52 is below f64 resolution here


@dataclass
class SyntheticSubject:
    radius: float
    static_dirs: np.ndarray   # (S, 3) unit, antipodal pairs (centered body)
    static_amp: np.ndarray    # (S,) positive
    static_kappa: np.ndarray  # (S,) lobe sharpness
    expr_dirs: np.ndarray     # (E, 3) unit
    expr_amp: np.ndarray      # (E,) amplitude at weight 1
    expr_kappa: np.ndarray    # (E,)
    expr_periods: np.ndarray  # (E,) animation periods, frames
    pose_periods: np.ndarray  # (5,) yaw, pitch, tx, ty, tz periods
    albedo_base: np.ndarray   # (3,)
    albedo_dirs: np.ndarray   # (A, 3)
    albedo_colors: np.ndarray  # (A, 3) signed color deltas
    albedo_kappa: np.ndarray  # (A,)
    specular_strength: float = 0.15
    specular_exponent: float = 24.0

    @property
    def n_expr(self) -> int:
        return self.expr_dirs.shape[0]

    @property
    def max_radius(self) -> float:
        return self.radius * (1.0 + self.static_amp.sum() + self.expr_amp.sum())

    # -- fields ----------------------------------------------------------

    def surface_radius(self, u, weights):
        """r(u) for unit directions u (..., 3)."""
        u = np.asarray(u, dtype=np.float64)
        w = np.asarray(weights, dtype=np.float64)
        bump = np.exp(self.static_kappa * (u @ self.static_dirs.T - 1.0))
        r = 1.0 + bump @ self.static_amp
        ebump = np.exp(self.expr_kappa * (u @ self.expr_dirs.T - 1.0))
        r = r + ebump @ (self.expr_amp * w)
        return self.radius * r

    def _radius_grad(self, u, weights):
        """d r / d u, same leading shape as u."""
        u = np.asarray(u, dtype=np.float64)
        w = np.asarray(weights, dtype=np.float64)
        sb = np.exp(self.static_kappa * (u @ self.static_dirs.T - 1.0))
        g = (sb * (self.static_amp * self.static_kappa)) @ self.static_dirs
        eb = np.exp(self.expr_kappa * (u @ self.expr_dirs.T - 1.0))
        g = g + (eb * (self.expr_amp * w * self.expr_kappa)) @ self.expr_dirs
        return self.radius * g

    def albedo(self, u):
        """Per-point RGB albedo in [0.05, 0.95], smooth on the sphere."""
        u = np.asarray(u, dtype=np.float64)
        lobe = np.exp(self.albedo_kappa * (u @ self.albedo_dirs.T - 1.0))
        a = self.albedo_base + lobe @ self.albedo_colors
        return np.clip(a, 0.05, 0.95)

    # -- animation tracks --------------------------------------------------

    def expression_weights(self, frame: int) -> np.ndarray:
        """Smooth per-lobe weights in [0, 1]; exactly zero at frame 0."""
        phase = 2.0 * np.pi * frame / self.expr_periods
        return 0.5 * (1.0 - np.cos(phase))

    def pose(self, frame: int):
        """Rigid pose (R, t); identity at frame 0 by construction."""
        s = np.sin(2.0 * np.pi * frame / self.pose_periods)
        yaw, pitch = 0.18 * s[0], 0.12 * s[1]
        cy, sy = np.cos(yaw), np.sin(yaw)
        cp, sp = np.cos(pitch), np.sin(pitch)
        ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
        rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
        t = np.array([0.015 * s[2], 0.012 * s[3], 0.010 * s[4]])
        return ry @ rx, t

    def frame_state(self, frame: int):
        w = self.expression_weights(frame)
        rot, trans = self.pose(frame)
        return w, rot, trans

    # -- mesh view ---------------------------------------------------------

    def mesh_at(self, weights, n_lon: int = 24, n_lat: int = 25) -> TemplateMesh:
        base = make_template_sphere(n_lon=n_lon, n_lat=n_lat, radius=1.0)
        dirs = base.vertices / np.linalg.norm(base.vertices, axis=1, keepdims=True)
        verts = self.surface_radius(dirs, weights)[:, None] * dirs
        return TemplateMesh(verts, base.triangles, base.uv, base.weight_mask)


def make_subject(seed: int = 0, radius: float = 0.11,
                 n_expr: int = 8) -> SyntheticSubject:
    rng = np.random.default_rng(seed)

    def unit_rows(n):
        v = rng.standard_normal((n, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    # Static features come in antipodal pairs: the base body is
    # centrosymmetric, its centroid sits at the origin, and frame-0
    # alignment against the template is exact.
    half = unit_rows(3)
    static_dirs = np.concatenate([half, -half])
    static_amp = np.repeat(rng.uniform(0.04, 0.10, 3), 2)
    static_kappa = np.repeat(rng.uniform(6.0, 14.0, 3), 2)

    return SyntheticSubject(
        radius=radius,
        static_dirs=static_dirs,
        static_amp=static_amp,
        static_kappa=static_kappa,
        expr_dirs=unit_rows(n_expr),
        expr_amp=rng.uniform(0.08, 0.16, n_expr),
        expr_kappa=rng.uniform(8.0, 18.0, n_expr),
        expr_periods=rng.integers(97, 331, n_expr).astype(np.float64),
        pose_periods=rng.integers(151, 457, 5).astype(np.float64),
        albedo_base=rng.uniform(0.35, 0.55, 3),
        albedo_dirs=unit_rows(6),
        albedo_colors=rng.uniform(-0.3, 0.3, (6, 3)),
        albedo_kappa=rng.uniform(4.0, 12.0, 6),
    )


def min_face_area(mesh: TemplateMesh) -> float:
    v = mesh.vertices
    tri = mesh.triangles
    e1 = v[tri[:, 1]] - v[tri[:, 0]]
    e2 = v[tri[:, 2]] - v[tri[:, 0]]
    return float(0.5 * np.linalg.norm(np.cross(e1, e2), axis=1).min())


def cast_rays(subject: SyntheticSubject, origins, dirs, weights,
              pose_rot=None, pose_trans=None):
    """Exact first hits against the radial surface.

    Returns (hit (N,) bool, world points, world normals, subject-frame unit
    directions), hit rows filled, the rest zero. Rays move into the subject
    frame, the bounding sphere brackets t, a coarse scan finds the first
    sign change of |x| - r(x/|x|), bisection polishes it. The surface is
    star-shaped, so the first sign change is the true entry point as long
    as the scan is finer than the narrowest lobe, which N_COARSE guarantees
    for the kappa range make_subject draws.
    """
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    if pose_rot is not None:
        rot = np.asarray(pose_rot, dtype=np.float64)
        o = (o - np.asarray(pose_trans, dtype=np.float64)) @ rot
        d = d @ rot

    n = o.shape[0]
    # Pad the bounding sphere so the scan starts strictly outside the body
    # even where a lobe peak (or a bump-free subject) touches the bound.
    r_max = subject.max_radius * (1.0 + 1e-9)
    b = np.einsum("ij,ij->i", o, d)
    c = np.einsum("ij,ij->i", o, o) - r_max * r_max
    disc = b * b - c
    hit_sphere = disc > 0.0
    sq = np.sqrt(np.where(hit_sphere, disc, 0.0))
    # Clamp the bracket to the forward half-line and drop rays whose whole
    # chord sits behind the origin.
    t_lo = np.maximum(np.where(hit_sphere, -b - sq, 0.0), 0.0)
    t_hi = np.where(hit_sphere, -b + sq, 0.0)
    hit_sphere &= t_hi > 0.0

    def f_at(t, rows):
        x = o[rows] + t[:, None] * d[rows]
        nx = np.linalg.norm(x, axis=1)
        u = x / np.maximum(nx, 1e-300)[:, None]
        return nx - subject.surface_radius(u, weights)

    rows = np.flatnonzero(hit_sphere)
    ts = (t_lo[rows, None]
          + (t_hi - t_lo)[rows, None] * np.linspace(0.0, 1.0, N_COARSE))
    fs = np.stack([f_at(ts[:, k], rows) for k in range(N_COARSE)], axis=1)
    neg = fs < 0.0
    first = np.argmax(neg, axis=1)
    found = neg.any(axis=1) & (first > 0)
    rows = rows[found]
    k = first[found]
    lo = ts[found, k - 1]
    hi = ts[found, k]
    for _ in range(N_BISECT):
        mid = 0.5 * (lo + hi)
        below = f_at(mid, rows) < 0.0
        hi = np.where(below, mid, hi)
        lo = np.where(below, lo, mid)

    hit = np.zeros(n, dtype=bool)
    points = np.zeros((n, 3))
    normals = np.zeros((n, 3))
    u_subj = np.zeros((n, 3))
    if rows.size:
        hit[rows] = True
        t_star = 0.5 * (lo + hi)
        x = o[rows] + t_star[:, None] * d[rows]
        nx = np.linalg.norm(x, axis=1)
        u = x / nx[:, None]
        g = subject._radius_grad(u, weights)
        g_tan = g - u * np.einsum("ij,ij->i", g, u)[:, None]
        grad_f = u - g_tan / nx[:, None]
        nrm = grad_f / np.linalg.norm(grad_f, axis=1, keepdims=True)
        if pose_rot is not None:
            x = x @ rot.T + np.asarray(pose_trans, dtype=np.float64)
            nrm = nrm @ rot.T
        points[rows] = x
        normals[rows] = nrm
        u_subj[rows] = u
    return hit, points, normals, u_subj


def shading_kernel(subject: SyntheticSubject, points, normals, view_pos,
                   rig: LightRig):
    """Per-light response matrices, each (N, n_lights).

    Channel-c radiance is (albedo_c * diffuse + specular) @ l_c: the image
    is a fixed linear map of the light vector by construction.
    """
    n = np.asarray(normals, dtype=np.float64)
    x = np.asarray(points, dtype=np.float64)
    omega = rig.directions
    diffuse = np.maximum(0.0, n @ omega.T)
    v = np.asarray(view_pos, dtype=np.float64) - x
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    h = v[:, None, :] + omega[None, :, :]
    h /= np.linalg.norm(h, axis=2, keepdims=True)
    ndh = np.maximum(0.0, np.einsum("ij,ikj->ik", n, h))
    specular = subject.specular_strength * ndh ** subject.specular_exponent
    # A light behind the surface contributes nothing, speculars included.
    specular = specular * (diffuse > 0.0)
    return diffuse, specular


def shade(subject: SyntheticSubject, rig: LightRig,
          pattern: LightingCondition, camera: Camera, frame: int = 0,
          background=None, chunk: int = 8192) -> np.ndarray:
    """Render one frame as (H, W, 3) linear radiance, float64.

    background may be (H, W, 3) or None (black). Mono cameras still get an
    RGB buffer here; the capture writer converts to luma when it stores.
    """
    if pattern.n_lights != rig.n_lights:
        raise ValueError(f"pattern has {pattern.n_lights} lights, "
                         f"rig has {rig.n_lights}")
    weights, rot, trans = subject.frame_state(frame)
    origins, dirs = camera.pixel_rays()
    h, w = camera.height, camera.width
    lights = pattern.intensities
    if lights.shape[0] == 1:
        lights = np.broadcast_to(lights, (3, pattern.n_lights))

    out = np.zeros((h * w, 3))
    if background is not None:
        out[:] = np.asarray(background, dtype=np.float64).reshape(h * w, 3)
    for s in range(0, h * w, chunk):
        sl = slice(s, min(s + chunk, h * w))
        hit, pts, nrm, u = cast_rays(subject, origins[sl], dirs[sl], weights,
                                     rot, trans)
        if not hit.any():
            continue
        diff, spec = shading_kernel(subject, pts[hit], nrm[hit],
                                    camera.position, rig)
        alb = subject.albedo(u[hit])
        px = np.stack([(alb[:, c, None] * diff + spec) @ lights[c]
                       for c in range(3)], axis=1)
        block = out[sl]
        block[hit] = px
        out[sl] = block
    return out.reshape(h, w, 3)
