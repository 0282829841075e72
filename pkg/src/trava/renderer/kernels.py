"""Ray-march inner loops, written once and optionally jitted.

Every function here is numba-njit compatible; when numba is installed the
module exports jitted versions, otherwise the pure-Python originals run
(slow, but semantically identical). The march accumulates the clamped
integral of opacity: A(t) = min(1, integral of density), colors weighted by
dA, with the saturation step split analytically at the clamp boundary.

Grids are (P, M^3) flat with index (ix*M + iy)*M + iz over local axes; a
primitive fills the local cube [-1,1]^3 mapped by x = R (s*u) + t.

Grids may be float32 or float64 storage, but every other array (geometry,
t bounds, upstream grads, outputs, gradient buffers) must be float64 and
grid loads go through float(): all arithmetic then runs in float64 on both
the jitted and plain-Python paths, which keeps the two bit-identical.
"""

from __future__ import annotations

import math

import numpy as np

try:
    from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False
    prange = range

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


@njit(cache=True)
def _sample_grid(grid, p, m, gx, gy, gz):
    """Trilinear sample of grid row p at continuous coords in [0, m-1]."""
    ix = int(math.floor(gx))
    iy = int(math.floor(gy))
    iz = int(math.floor(gz))
    if ix > m - 2:
        ix = m - 2
    if iy > m - 2:
        iy = m - 2
    if iz > m - 2:
        iz = m - 2
    if ix < 0:
        ix = 0
    if iy < 0:
        iy = 0
    if iz < 0:
        iz = 0
    fx = gx - ix
    fy = gy - iy
    fz = gz - iz
    base = (ix * m + iy) * m + iz
    c000 = np.float64(grid[p, base])
    c001 = np.float64(grid[p, base + 1])
    c010 = np.float64(grid[p, base + m])
    c011 = np.float64(grid[p, base + m + 1])
    c100 = np.float64(grid[p, base + m * m])
    c101 = np.float64(grid[p, base + m * m + 1])
    c110 = np.float64(grid[p, base + m * m + m])
    c111 = np.float64(grid[p, base + m * m + m + 1])
    c00 = c000 * (1 - fz) + c001 * fz
    c01 = c010 * (1 - fz) + c011 * fz
    c10 = c100 * (1 - fz) + c101 * fz
    c11 = c110 * (1 - fz) + c111 * fz
    c0 = c00 * (1 - fy) + c01 * fy
    c1 = c10 * (1 - fy) + c11 * fy
    return c0 * (1 - fx) + c1 * fx


@njit(cache=True)
def _scatter_grid(grad, p, m, gx, gy, gz, value):
    """Adjoint of _sample_grid: scatter `value` to the 8 corners."""
    ix = int(math.floor(gx))
    iy = int(math.floor(gy))
    iz = int(math.floor(gz))
    if ix > m - 2:
        ix = m - 2
    if iy > m - 2:
        iy = m - 2
    if iz > m - 2:
        iz = m - 2
    if ix < 0:
        ix = 0
    if iy < 0:
        iy = 0
    if iz < 0:
        iz = 0
    fx = gx - ix
    fy = gy - iy
    fz = gz - iz
    base = (ix * m + iy) * m + iz
    grad[p, base] += value * (1 - fx) * (1 - fy) * (1 - fz)
    grad[p, base + 1] += value * (1 - fx) * (1 - fy) * fz
    grad[p, base + m] += value * (1 - fx) * fy * (1 - fz)
    grad[p, base + m + 1] += value * (1 - fx) * fy * fz
    grad[p, base + m * m] += value * fx * (1 - fy) * (1 - fz)
    grad[p, base + m * m + 1] += value * fx * (1 - fy) * fz
    grad[p, base + m * m + m] += value * fx * fy * (1 - fz)
    grad[p, base + m * m + m + 1] += value * fx * fy * fz


@njit(cache=True)
def _sample_grid_with_spatial_grad(grid, p, m, gx, gy, gz):
    """Value and d(value)/d(gx,gy,gz); derivative zero where coords clamp."""
    ix = int(math.floor(gx))
    iy = int(math.floor(gy))
    iz = int(math.floor(gz))
    if ix > m - 2:
        ix = m - 2
    if iy > m - 2:
        iy = m - 2
    if iz > m - 2:
        iz = m - 2
    if ix < 0:
        ix = 0
    if iy < 0:
        iy = 0
    if iz < 0:
        iz = 0
    fx = gx - ix
    fy = gy - iy
    fz = gz - iz
    inx = 1.0 if (fx >= 0.0 and fx <= 1.0) else 0.0
    iny = 1.0 if (fy >= 0.0 and fy <= 1.0) else 0.0
    inz = 1.0 if (fz >= 0.0 and fz <= 1.0) else 0.0
    if fx < 0:
        fx = 0.0
    elif fx > 1:
        fx = 1.0
    if fy < 0:
        fy = 0.0
    elif fy > 1:
        fy = 1.0
    if fz < 0:
        fz = 0.0
    elif fz > 1:
        fz = 1.0
    base = (ix * m + iy) * m + iz
    c000 = np.float64(grid[p, base])
    c001 = np.float64(grid[p, base + 1])
    c010 = np.float64(grid[p, base + m])
    c011 = np.float64(grid[p, base + m + 1])
    c100 = np.float64(grid[p, base + m * m])
    c101 = np.float64(grid[p, base + m * m + 1])
    c110 = np.float64(grid[p, base + m * m + m])
    c111 = np.float64(grid[p, base + m * m + m + 1])
    c00 = c000 * (1 - fz) + c001 * fz
    c01 = c010 * (1 - fz) + c011 * fz
    c10 = c100 * (1 - fz) + c101 * fz
    c11 = c110 * (1 - fz) + c111 * fz
    c0 = c00 * (1 - fy) + c01 * fy
    c1 = c10 * (1 - fy) + c11 * fy
    val = c0 * (1 - fx) + c1 * fx
    dx = (c1 - c0) * inx
    d0 = c01 - c00
    d1 = c11 - c10
    dy = (d0 * (1 - fx) + d1 * fx) * iny
    e00 = c001 - c000
    e01 = c011 - c010
    e10 = c101 - c100
    e11 = c111 - c110
    ez0 = e00 * (1 - fy) + e01 * fy
    ez1 = e10 * (1 - fy) + e11 * fy
    dz = (ez0 * (1 - fx) + ez1 * fx) * inz
    return val, dx, dy, dz


@njit(cache=True)
def march_forward_range(valpha, vrgb, rot, trans, scale, origins, dirs, tmins,
                        tmaxs, deltas, step, roff, rprim, rtin, rtout, out,
                        r_start, r_end):
    """March rays [r_start, r_end) and write (C+1)-wide rows of `out`."""
    n_chan = vrgb.shape[1]
    m = int(round(valpha.shape[1] ** (1.0 / 3.0)))
    num = np.zeros(n_chan, dtype=np.float64)
    for r in range(r_start, r_end):
        tmin = tmins[r]
        tmax = tmaxs[r]
        for c in range(n_chan + 1):
            out[r, c] = 0.0
        if tmax <= tmin:
            continue
        c0 = roff[r]
        c1 = roff[r + 1]
        if c1 == c0:
            continue
        ox = origins[r, 0]
        oy = origins[r, 1]
        oz = origins[r, 2]
        dxr = dirs[r, 0]
        dyr = dirs[r, 1]
        dzr = dirs[r, 2]
        delta = deltas[r]
        acc = 0.0
        head = c0  # first candidate whose interval may still be ahead
        n_steps = int(math.ceil((tmax - tmin) / step))
        k = 0
        while k < n_steps:
            t0 = tmin + k * step
            t1 = t0 + step
            if t1 > tmax:
                t1 = tmax
            w = t1 - t0
            tm = t0 + delta * w
            # Advance past candidates that ended before this sample.
            while head < c1 and rtout[head] < tm:
                head += 1
            if head >= c1:
                break
            if rtin[head] > tm:
                # Jump to the first step whose sample reaches the next entry.
                nk = int(math.floor((rtin[head] - tmin) / step - delta)) + 1
                if nk <= k:
                    nk = k + 1
                k = nk
                continue
            den = 0.0
            for c in range(n_chan):
                num[c] = 0.0
            px = ox + tm * dxr
            py = oy + tm * dyr
            pz = oz + tm * dzr
            for ci in range(head, c1):
                if rtin[ci] > tm:
                    break
                if rtout[ci] < tm:
                    continue
                p = rprim[ci]
                ux = (rot[p, 0, 0] * (px - trans[p, 0]) + rot[p, 1, 0] * (py - trans[p, 1])
                      + rot[p, 2, 0] * (pz - trans[p, 2])) / scale[p, 0]
                uy = (rot[p, 0, 1] * (px - trans[p, 0]) + rot[p, 1, 1] * (py - trans[p, 1])
                      + rot[p, 2, 1] * (pz - trans[p, 2])) / scale[p, 1]
                uz = (rot[p, 0, 2] * (px - trans[p, 0]) + rot[p, 1, 2] * (py - trans[p, 1])
                      + rot[p, 2, 2] * (pz - trans[p, 2])) / scale[p, 2]
                if ux < -1.0 or ux > 1.0 or uy < -1.0 or uy > 1.0 or uz < -1.0 or uz > 1.0:
                    continue
                gx = (ux + 1.0) * 0.5 * (m - 1)
                gy = (uy + 1.0) * 0.5 * (m - 1)
                gz = (uz + 1.0) * 0.5 * (m - 1)
                a = _sample_grid(valpha, p, m, gx, gy, gz)
                den += a
                for c in range(n_chan):
                    num[c] += a * _sample_grid(vrgb[:, c, :], p, m, gx, gy, gz)
            if den > 0.0:
                d_acc = den * w
                if acc + d_acc < 1.0:
                    for c in range(n_chan):
                        out[r, c] += num[c] * w
                    acc += d_acc
                else:
                    frac = (1.0 - acc) / den
                    for c in range(n_chan):
                        out[r, c] += num[c] * frac
                    acc = 1.0
                    break
            k += 1
        out[r, n_chan] = acc


@njit(cache=True, parallel=True)
def march_forward(valpha, vrgb, rot, trans, scale, origins, dirs, tmins, tmaxs,
                  deltas, step, roff, rprim, rtin, rtout, out, n_tiles):
    n_rays = origins.shape[0]
    tile = (n_rays + n_tiles - 1) // n_tiles
    for ti in prange(n_tiles):
        r0 = ti * tile
        r1 = min(r0 + tile, n_rays)
        if r0 < r1:
            march_forward_range(valpha, vrgb, rot, trans, scale, origins, dirs,
                                tmins, tmaxs, deltas, step, roff, rprim, rtin,
                                rtout, out, r0, r1)


@njit(cache=True)
def march_backward_range(valpha, vrgb, rot, trans, scale, origins, dirs, tmins,
                         tmaxs, deltas, step, roff, rprim, rtin, rtout, gout,
                         g_valpha, g_vrgb, g_rot, g_trans, g_scale,
                         r_start, r_end):
    """Adjoint of march_forward_range, replaying the forward sweep twice.

    Pass 1 finds the saturation step (if any) and the accumulated A before
    it; pass 2 distributes gradients. Samples after saturation never ran in
    the forward pass and get no gradient.
    """
    n_chan = vrgb.shape[1]
    m = int(round(valpha.shape[1] ** (1.0 / 3.0)))
    num = np.zeros(n_chan, dtype=np.float64)
    gnum = np.zeros(n_chan, dtype=np.float64)
    for r in range(r_start, r_end):
        tmin = tmins[r]
        tmax = tmaxs[r]
        if tmax <= tmin:
            continue
        c0 = roff[r]
        c1 = roff[r + 1]
        if c1 == c0:
            continue
        ox = origins[r, 0]
        oy = origins[r, 1]
        oz = origins[r, 2]
        dxr = dirs[r, 0]
        dyr = dirs[r, 1]
        dzr = dirs[r, 2]
        delta = deltas[r]
        galpha_out = gout[r, n_chan]
        any_g = galpha_out != 0.0
        for c in range(n_chan):
            if gout[r, c] != 0.0:
                any_g = True
        if not any_g:
            continue

        n_steps = int(math.ceil((tmax - tmin) / step))

        # Pass 1: locate the saturation step and A just before it, plus the
        # saturated step's density and weighted color.
        acc = 0.0
        sat_k = -1
        sat_den = 0.0
        a_before = 0.0
        head = c0
        k = 0
        while k < n_steps:
            t0 = tmin + k * step
            t1 = t0 + step
            if t1 > tmax:
                t1 = tmax
            w = t1 - t0
            tm = t0 + delta * w
            while head < c1 and rtout[head] < tm:
                head += 1
            if head >= c1:
                break
            if rtin[head] > tm:
                nk = int(math.floor((rtin[head] - tmin) / step - delta)) + 1
                if nk <= k:
                    nk = k + 1
                k = nk
                continue
            den = 0.0
            px = ox + tm * dxr
            py = oy + tm * dyr
            pz = oz + tm * dzr
            for ci in range(head, c1):
                if rtin[ci] > tm:
                    break
                if rtout[ci] < tm:
                    continue
                p = rprim[ci]
                ux = (rot[p, 0, 0] * (px - trans[p, 0]) + rot[p, 1, 0] * (py - trans[p, 1])
                      + rot[p, 2, 0] * (pz - trans[p, 2])) / scale[p, 0]
                uy = (rot[p, 0, 1] * (px - trans[p, 0]) + rot[p, 1, 1] * (py - trans[p, 1])
                      + rot[p, 2, 1] * (pz - trans[p, 2])) / scale[p, 1]
                uz = (rot[p, 0, 2] * (px - trans[p, 0]) + rot[p, 1, 2] * (py - trans[p, 1])
                      + rot[p, 2, 2] * (pz - trans[p, 2])) / scale[p, 2]
                if ux < -1.0 or ux > 1.0 or uy < -1.0 or uy > 1.0 or uz < -1.0 or uz > 1.0:
                    continue
                gx = (ux + 1.0) * 0.5 * (m - 1)
                gy = (uy + 1.0) * 0.5 * (m - 1)
                gz = (uz + 1.0) * 0.5 * (m - 1)
                den += _sample_grid(valpha, p, m, gx, gy, gz)
            if den > 0.0:
                d_acc = den * w
                if acc + d_acc < 1.0:
                    acc += d_acc
                else:
                    sat_k = k
                    sat_den = den
                    a_before = acc
                    acc = 1.0
                    break
            k += 1

        saturated = sat_k >= 0
        # Upstream-of-density common terms for the saturated step.
        sat_color_dot = 0.0  # sum_c gout_c * mean_color_c at the boundary
        if saturated:
            # Recompute num at the saturation step for the boundary terms.
            t0 = tmin + sat_k * step
            t1 = t0 + step
            if t1 > tmax:
                t1 = tmax
            w = t1 - t0
            tm = t0 + delta * w
            for c in range(n_chan):
                num[c] = 0.0
            px = ox + tm * dxr
            py = oy + tm * dyr
            pz = oz + tm * dzr
            for ci in range(c0, c1):
                if rtin[ci] > tm or rtout[ci] < tm:
                    continue
                p = rprim[ci]
                ux = (rot[p, 0, 0] * (px - trans[p, 0]) + rot[p, 1, 0] * (py - trans[p, 1])
                      + rot[p, 2, 0] * (pz - trans[p, 2])) / scale[p, 0]
                uy = (rot[p, 0, 1] * (px - trans[p, 0]) + rot[p, 1, 1] * (py - trans[p, 1])
                      + rot[p, 2, 1] * (pz - trans[p, 2])) / scale[p, 1]
                uz = (rot[p, 0, 2] * (px - trans[p, 0]) + rot[p, 1, 2] * (py - trans[p, 1])
                      + rot[p, 2, 2] * (pz - trans[p, 2])) / scale[p, 2]
                if ux < -1.0 or ux > 1.0 or uy < -1.0 or uy > 1.0 or uz < -1.0 or uz > 1.0:
                    continue
                gx = (ux + 1.0) * 0.5 * (m - 1)
                gy = (uy + 1.0) * 0.5 * (m - 1)
                gz = (uz + 1.0) * 0.5 * (m - 1)
                a = _sample_grid(valpha, p, m, gx, gy, gz)
                for c in range(n_chan):
                    num[c] += a * _sample_grid(vrgb[:, c, :], p, m, gx, gy, gz)
            for c in range(n_chan):
                sat_color_dot += gout[r, c] * (num[c] / sat_den)

        # Pass 2: walk the same samples and distribute gradients.
        head = c0
        k = 0
        last_k = sat_k if saturated else n_steps - 1
        while k < n_steps and k <= last_k:
            t0 = tmin + k * step
            t1 = t0 + step
            if t1 > tmax:
                t1 = tmax
            w = t1 - t0
            tm = t0 + delta * w
            while head < c1 and rtout[head] < tm:
                head += 1
            if head >= c1:
                break
            if rtin[head] > tm:
                nk = int(math.floor((rtin[head] - tmin) / step - delta)) + 1
                if nk <= k:
                    nk = k + 1
                k = nk
                continue
            px = ox + tm * dxr
            py = oy + tm * dyr
            pz = oz + tm * dzr
            # The forward pass drops steps whose density sum is negative, so
            # they carry no gradient; recompute den to apply the same branch.
            den = 0.0
            for ci in range(head, c1):
                if rtin[ci] > tm:
                    break
                if rtout[ci] < tm:
                    continue
                p = rprim[ci]
                ux = (rot[p, 0, 0] * (px - trans[p, 0]) + rot[p, 1, 0] * (py - trans[p, 1])
                      + rot[p, 2, 0] * (pz - trans[p, 2])) / scale[p, 0]
                uy = (rot[p, 0, 1] * (px - trans[p, 0]) + rot[p, 1, 1] * (py - trans[p, 1])
                      + rot[p, 2, 1] * (pz - trans[p, 2])) / scale[p, 1]
                uz = (rot[p, 0, 2] * (px - trans[p, 0]) + rot[p, 1, 2] * (py - trans[p, 1])
                      + rot[p, 2, 2] * (pz - trans[p, 2])) / scale[p, 2]
                if ux < -1.0 or ux > 1.0 or uy < -1.0 or uy > 1.0 or uz < -1.0 or uz > 1.0:
                    continue
                gx = (ux + 1.0) * 0.5 * (m - 1)
                gy = (uy + 1.0) * 0.5 * (m - 1)
                gz = (uz + 1.0) * 0.5 * (m - 1)
                den += _sample_grid(valpha, p, m, gx, gy, gz)
            if den < 0.0:
                k += 1
                continue
            is_sat = saturated and k == sat_k
            # Upstream gradient of this step's num (per channel) and den.
            if is_sat:
                for c in range(n_chan):
                    gnum[c] = gout[r, c] * ((1.0 - a_before) / sat_den)
                gden = -sat_color_dot * (1.0 - a_before) / sat_den
            else:
                for c in range(n_chan):
                    gnum[c] = gout[r, c] * w
                gden = galpha_out * w
                if saturated:
                    # Pre-boundary densities push the boundary via A.
                    gden = -sat_color_dot * w
            for ci in range(head, c1):
                if rtin[ci] > tm:
                    break
                if rtout[ci] < tm:
                    continue
                p = rprim[ci]
                yx = px - trans[p, 0]
                yy = py - trans[p, 1]
                yz = pz - trans[p, 2]
                ux = (rot[p, 0, 0] * yx + rot[p, 1, 0] * yy + rot[p, 2, 0] * yz) / scale[p, 0]
                uy = (rot[p, 0, 1] * yx + rot[p, 1, 1] * yy + rot[p, 2, 1] * yz) / scale[p, 1]
                uz = (rot[p, 0, 2] * yx + rot[p, 1, 2] * yy + rot[p, 2, 2] * yz) / scale[p, 2]
                if ux < -1.0 or ux > 1.0 or uy < -1.0 or uy > 1.0 or uz < -1.0 or uz > 1.0:
                    continue
                gx = (ux + 1.0) * 0.5 * (m - 1)
                gy = (uy + 1.0) * 0.5 * (m - 1)
                gz = (uz + 1.0) * 0.5 * (m - 1)
                a, dax, day, daz = _sample_grid_with_spatial_grad(valpha, p, m, gx, gy, gz)
                # d(loss)/d(alpha_sample): through den and through num.
                galpha_s = gden
                # Spatial gradient accumulator for the sample position in
                # grid coords.
                gpx = 0.0
                gpy = 0.0
                gpz = 0.0
                for c in range(n_chan):
                    cv, dcx, dcy, dcz = _sample_grid_with_spatial_grad(
                        vrgb[:, c, :], p, m, gx, gy, gz)
                    galpha_s += gnum[c] * cv
                    gcol_s = gnum[c] * a
                    _scatter_grid(g_vrgb[:, c, :], p, m, gx, gy, gz, gcol_s)
                    gpx += gcol_s * dcx
                    gpy += gcol_s * dcy
                    gpz += gcol_s * dcz
                _scatter_grid(g_valpha, p, m, gx, gy, gz, galpha_s)
                gpx += galpha_s * dax
                gpy += galpha_s * day
                gpz += galpha_s * daz
                # Grid coords -> local cube coords.
                h = 0.5 * (m - 1)
                gux = gpx * h
                guy = gpy * h
                guz = gpz * h
                # u = diag(1/s) R^T y. Distribute to R, t, s.
                su0 = gux / scale[p, 0]
                su1 = guy / scale[p, 1]
                su2 = guz / scale[p, 2]
                g_rot[p, 0, 0] += yx * su0
                g_rot[p, 1, 0] += yy * su0
                g_rot[p, 2, 0] += yz * su0
                g_rot[p, 0, 1] += yx * su1
                g_rot[p, 1, 1] += yy * su1
                g_rot[p, 2, 1] += yz * su1
                g_rot[p, 0, 2] += yx * su2
                g_rot[p, 1, 2] += yy * su2
                g_rot[p, 2, 2] += yz * su2
                wx = rot[p, 0, 0] * su0 + rot[p, 0, 1] * su1 + rot[p, 0, 2] * su2
                wy = rot[p, 1, 0] * su0 + rot[p, 1, 1] * su1 + rot[p, 1, 2] * su2
                wz = rot[p, 2, 0] * su0 + rot[p, 2, 1] * su1 + rot[p, 2, 2] * su2
                g_trans[p, 0] -= wx
                g_trans[p, 1] -= wy
                g_trans[p, 2] -= wz
                g_scale[p, 0] -= gux * ux / scale[p, 0]
                g_scale[p, 1] -= guy * uy / scale[p, 1]
                g_scale[p, 2] -= guz * uz / scale[p, 2]
            k += 1


@njit(cache=True, parallel=True)
def march_backward(valpha, vrgb, rot, trans, scale, origins, dirs, tmins,
                   tmaxs, deltas, step, roff, rprim, rtin, rtout, gout,
                   g_valpha_t, g_vrgb_t, g_rot_t, g_trans_t, g_scale_t):
    """Tiled adjoint: tile i accumulates into slot i of each buffer."""
    n_tiles = g_valpha_t.shape[0]
    n_rays = origins.shape[0]
    tile = (n_rays + n_tiles - 1) // n_tiles
    for ti in prange(n_tiles):
        r0 = ti * tile
        r1 = min(r0 + tile, n_rays)
        if r0 < r1:
            march_backward_range(valpha, vrgb, rot, trans, scale, origins,
                                 dirs, tmins, tmaxs, deltas, step, roff, rprim,
                                 rtin, rtout, gout, g_valpha_t[ti],
                                 g_vrgb_t[ti], g_rot_t[ti], g_trans_t[ti],
                                 g_scale_t[ti], r0, r1)
