"""Differentiable accumulative march as a single fused autodiff op.

The op takes the five payload tensors (opacity grid, color grid, rotation,
translation, scale) plus plain ray arrays, walks a fixed global step lattice
per ray and returns an (n_rays, C+1) tensor whose last channel is opacity.
Forward and backward share one candidate list so both walk exactly the same
samples.
"""

from __future__ import annotations

import numpy as np

from ..diffcore.tensor import as_tensor, make_node
from . import kernels
from .bvh import build_bvh, candidates_brute, candidates_bvh, obb_world_bounds

# Backward reduces per-tile gradient buffers in a fixed order, so the tile
# count is pinned here; thread count only changes speed, never bits.
N_GRAD_TILES = 8
_N_FWD_TILES = 32


def grid_resolution(n_cells: int) -> int:
    m = round(n_cells ** (1.0 / 3.0))
    if m * m * m != n_cells or m < 2:
        raise ValueError(f"grid size {n_cells} is not a cube of an int >= 2")
    return m


def default_step(scale, m: int) -> float:
    """Half the smallest voxel extent over all primitives."""
    s = np.asarray(scale if not hasattr(scale, "data") else scale.data)
    if s.size == 0:
        return 1.0
    voxel = 2.0 * float(s.min()) / (m - 1)
    return 0.5 * voxel


def scene_bounds(rotation, translation, scale):
    """World AABB covering every primitive's oriented box."""
    lo, hi = obb_world_bounds(np.asarray(rotation), np.asarray(translation),
                              np.asarray(scale))
    return lo.min(axis=0), hi.max(axis=0)


def march(v_alpha, v_rgb, rotation, translation, scale, origins, dirs,
          t_min, t_max, step: float | None = None, deltas=None,
          use_bvh: bool = True):
    """March rays through the transformed grids; returns (n_rays, C+1).

    deltas: per-ray sample offset within each step, in [0, 1); default 0.5
    (midpoint). Training jitters these, tests keep the default.
    """
    va = as_tensor(v_alpha)
    vr = as_tensor(v_rgb, like=va)
    rot = as_tensor(rotation, like=va)
    tra = as_tensor(translation, like=va)
    sca = as_tensor(scale, like=va)
    dtypes = {t.data.dtype for t in (va, vr, rot, tra, sca)}
    if len(dtypes) > 1:
        raise ValueError(f"march: payload dtypes differ: {sorted(map(str, dtypes))}")
    dtype = va.data.dtype

    if va.data.ndim != 2:
        raise ValueError(f"march: v_alpha must be (P, M^3), got {va.shape}")
    n_prim, n_cells = va.shape
    m = grid_resolution(n_cells)
    if vr.data.ndim != 3 or vr.shape[0] != n_prim or vr.shape[2] != n_cells:
        raise ValueError(f"march: v_rgb shape {vr.shape} does not match v_alpha")
    n_chan = vr.shape[1]
    if rot.shape != (n_prim, 3, 3) or tra.shape != (n_prim, 3) or sca.shape != (n_prim, 3):
        raise ValueError("march: transform shapes must be (P,3,3), (P,3), (P,3)")
    if n_prim and not (sca.data > 0).all():
        raise ValueError("march: scales must be positive")

    origins = np.ascontiguousarray(origins, dtype=np.float64)
    dirs = np.ascontiguousarray(dirs, dtype=np.float64)
    if origins.ndim != 2 or origins.shape[1] != 3 or origins.shape != dirs.shape:
        raise ValueError("march: origins/dirs must both be (n_rays, 3)")
    n_rays = origins.shape[0]
    # The t lattice runs in float64 on every path so the jitted and plain
    # kernels agree bit for bit regardless of payload dtype.
    tmins = np.ascontiguousarray(t_min, dtype=np.float64)
    tmaxs = np.ascontiguousarray(t_max, dtype=np.float64)
    if tmins.shape != (n_rays,) or tmaxs.shape != (n_rays,):
        raise ValueError("march: t_min/t_max must be (n_rays,)")
    if deltas is None:
        deltas = np.full(n_rays, 0.5)
    deltas = np.ascontiguousarray(np.broadcast_to(deltas, (n_rays,)), dtype=np.float64)
    if n_rays and (deltas.min() < 0.0 or deltas.max() >= 1.0):
        raise ValueError("march: deltas must lie in [0, 1)")
    if step is None:
        step = default_step(sca.data, m)
    step = float(step)
    if step <= 0:
        raise ValueError("march: step must be positive")

    if n_prim == 0 or n_rays == 0:
        out = np.zeros((n_rays, n_chan + 1), dtype=dtype)

        def bwd_empty(g):
            return (np.zeros_like(va.data), np.zeros_like(vr.data),
                    np.zeros_like(rot.data), np.zeros_like(tra.data),
                    np.zeros_like(sca.data))

        return make_node(out, (va, vr, rot, tra, sca), "march", bwd_empty)

    # Geometry runs in float64 on every path (see kernels module docstring);
    # only the grids keep the payload dtype.
    rot_d = np.ascontiguousarray(rot.data, dtype=np.float64)
    tra_d = np.ascontiguousarray(tra.data, dtype=np.float64)
    sca_d = np.ascontiguousarray(sca.data, dtype=np.float64)
    if use_bvh:
        lo, hi = obb_world_bounds(rot_d, tra_d, sca_d)
        tree = build_bvh(lo, hi)
        roff, rprim, rtin, rtout = candidates_bvh(tree, rot_d, tra_d, sca_d,
                                                  origins, dirs, tmins, tmaxs)
    else:
        roff, rprim, rtin, rtout = candidates_brute(rot_d, tra_d, sca_d,
                                                    origins, dirs, tmins, tmaxs)

    va_d = np.ascontiguousarray(va.data)
    vr_d = np.ascontiguousarray(vr.data)
    out64 = np.zeros((n_rays, n_chan + 1), dtype=np.float64)
    kernels.march_forward(va_d, vr_d, rot_d, tra_d, sca_d, origins, dirs,
                          tmins, tmaxs, deltas, step, roff, rprim, rtin, rtout,
                          out64, _N_FWD_TILES)
    out = out64.astype(dtype, copy=False)

    def bwd(g):
        g = np.ascontiguousarray(g, dtype=np.float64)
        nt = N_GRAD_TILES
        g_va = np.zeros((nt,) + va.shape, dtype=np.float64)
        g_vr = np.zeros((nt,) + vr.shape, dtype=np.float64)
        g_rot = np.zeros((nt, n_prim, 3, 3), dtype=np.float64)
        g_tra = np.zeros((nt, n_prim, 3), dtype=np.float64)
        g_sca = np.zeros((nt, n_prim, 3), dtype=np.float64)
        kernels.march_backward(va_d, vr_d, rot_d, tra_d, sca_d, origins, dirs,
                               tmins, tmaxs, deltas, step, roff, rprim, rtin,
                               rtout, g, g_va, g_vr, g_rot, g_tra, g_sca)
        return (g_va.sum(axis=0).astype(dtype, copy=False),
                g_vr.sum(axis=0).astype(dtype, copy=False),
                g_rot.sum(axis=0).astype(dtype, copy=False),
                g_tra.sum(axis=0).astype(dtype, copy=False),
                g_sca.sum(axis=0).astype(dtype, copy=False))

    return make_node(out, (va, vr, rot, tra, sca), "march", bwd)
