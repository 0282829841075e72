"""Primitive BVH and candidate-interval generation.

Candidates are (primitive, t_entry, t_exit) per ray against the primitive's
exact oriented box, stored as CSR arrays sorted by (t_entry, primitive).
The BVH only prunes primitives whose axis-aligned bound the ray misses, so
BVH-on and BVH-off produce identical candidate lists and therefore
bit-identical renders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import njit


def obb_world_bounds(rot: np.ndarray, trans: np.ndarray, scale: np.ndarray):
    """AABB of each oriented box x = R (s*u) + t, u in [-1,1]^3."""
    half = np.einsum("pia,pa->pi", np.abs(rot), scale)
    return trans - half, trans + half


@dataclass
class FlatBvh:
    node_lo: np.ndarray  # (NN, 3)
    node_hi: np.ndarray
    left: np.ndarray  # (NN,) child index, -1 at leaves
    right: np.ndarray
    leaf_start: np.ndarray  # (NN,) offset into prim_order
    leaf_count: np.ndarray
    prim_order: np.ndarray  # (P,)

    @property
    def n_nodes(self) -> int:
        return self.node_lo.shape[0]


def build_bvh(lo: np.ndarray, hi: np.ndarray, leaf_size: int = 2) -> FlatBvh:
    """Median-split BVH over primitive AABBs."""
    n = lo.shape[0]
    centers = 0.5 * (lo + hi)
    node_lo, node_hi, left, right, lstart, lcount = [], [], [], [], [], []
    order: list = []

    def emit(idx: np.ndarray) -> int:
        node = len(node_lo)
        node_lo.append(lo[idx].min(axis=0))
        node_hi.append(hi[idx].max(axis=0))
        left.append(-1)
        right.append(-1)
        lstart.append(-1)
        lcount.append(0)
        if idx.size <= leaf_size:
            lstart[node] = len(order)
            lcount[node] = idx.size
            order.extend(int(i) for i in idx)
            return node
        c = centers[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        mid = idx.size // 2
        part = idx[np.argsort(c[:, axis], kind="stable")]
        left[node] = emit(part[:mid])
        right[node] = emit(part[mid:])
        return node

    if n:
        emit(np.arange(n))
    else:
        node_lo.append(np.zeros(3))
        node_hi.append(np.zeros(3))
        left.append(-1)
        right.append(-1)
        lstart.append(0)
        lcount.append(0)
    return FlatBvh(np.asarray(node_lo), np.asarray(node_hi),
                   np.asarray(left, dtype=np.int64), np.asarray(right, dtype=np.int64),
                   np.asarray(lstart, dtype=np.int64), np.asarray(lcount, dtype=np.int64),
                   np.asarray(order, dtype=np.int64))


@njit(cache=True)
def _query_fill(node_lo, node_hi, left, right, lstart, lcount, prim_order,
                rot, trans, scale, origins, dirs, tmins, tmaxs,
                cand_prim, cand_tin, cand_tout, counts):
    n_rays = origins.shape[0]
    stack = np.empty(128, dtype=np.int64)
    for r in range(n_rays):
        n_found = 0
        tmin = tmins[r]
        tmax = tmaxs[r]
        if tmax > tmin:
            ox, oy, oz = origins[r, 0], origins[r, 1], origins[r, 2]
            dx, dy, dz = dirs[r, 0], dirs[r, 1], dirs[r, 2]
            top = 0
            stack[0] = 0
            top = 1
            while top > 0:
                top -= 1
                node = stack[top]
                # Slab test against the node AABB.
                t0 = tmin
                t1 = tmax
                ok = True
                for a in range(3):
                    o = origins[r, a]
                    d = dirs[r, a]
                    if abs(d) < 1e-15:
                        if o < node_lo[node, a] or o > node_hi[node, a]:
                            ok = False
                            break
                    else:
                        ta = (node_lo[node, a] - o) / d
                        tb = (node_hi[node, a] - o) / d
                        if ta > tb:
                            ta, tb = tb, ta
                        if ta > t0:
                            t0 = ta
                        if tb < t1:
                            t1 = tb
                        if t0 > t1:
                            ok = False
                            break
                if not ok:
                    continue
                if left[node] < 0:
                    for i in range(lstart[node], lstart[node] + lcount[node]):
                        p = prim_order[i]
                        # Exact oriented-box interval.
                        e0 = tmin
                        e1 = tmax
                        hit = True
                        for a in range(3):
                            ra0 = rot[p, 0, a]
                            ra1 = rot[p, 1, a]
                            ra2 = rot[p, 2, a]
                            s = scale[p, a]
                            oo = (ra0 * (ox - trans[p, 0]) + ra1 * (oy - trans[p, 1])
                                  + ra2 * (oz - trans[p, 2])) / s
                            dd = (ra0 * dx + ra1 * dy + ra2 * dz) / s
                            if abs(dd) < 1e-15:
                                if oo < -1.0 or oo > 1.0:
                                    hit = False
                                    break
                            else:
                                ta = (-1.0 - oo) / dd
                                tb = (1.0 - oo) / dd
                                if ta > tb:
                                    ta, tb = tb, ta
                                if ta > e0:
                                    e0 = ta
                                if tb < e1:
                                    e1 = tb
                                if e0 > e1:
                                    hit = False
                                    break
                        if hit:
                            # Insertion sort by (t_in, prim index).
                            j = n_found
                            while j > 0 and (cand_tin[r, j - 1] > e0 or
                                             (cand_tin[r, j - 1] == e0 and
                                              cand_prim[r, j - 1] > p)):
                                cand_prim[r, j] = cand_prim[r, j - 1]
                                cand_tin[r, j] = cand_tin[r, j - 1]
                                cand_tout[r, j] = cand_tout[r, j - 1]
                                j -= 1
                            cand_prim[r, j] = p
                            cand_tin[r, j] = e0
                            cand_tout[r, j] = e1
                            n_found += 1
                else:
                    stack[top] = left[node]
                    top += 1
                    stack[top] = right[node]
                    top += 1
        counts[r] = n_found


def candidates_bvh(bvh: FlatBvh, rot, trans, scale, origins, dirs, tmins, tmaxs):
    """CSR candidate intervals via BVH traversal."""
    n_rays = origins.shape[0]
    n_prim = rot.shape[0]
    if n_prim == 0:
        off = np.zeros(n_rays + 1, dtype=np.int64)
        empty = np.zeros(0, dtype=rot.dtype)
        return off, np.zeros(0, dtype=np.int64), empty, empty
    cand_prim = np.empty((n_rays, n_prim), dtype=np.int64)
    cand_tin = np.empty((n_rays, n_prim), dtype=rot.dtype)
    cand_tout = np.empty((n_rays, n_prim), dtype=rot.dtype)
    counts = np.empty(n_rays, dtype=np.int64)
    _query_fill(bvh.node_lo.astype(rot.dtype), bvh.node_hi.astype(rot.dtype),
                bvh.left, bvh.right, bvh.leaf_start, bvh.leaf_count,
                bvh.prim_order, rot, trans, scale, origins, dirs, tmins, tmaxs,
                cand_prim, cand_tin, cand_tout, counts)
    off = np.zeros(n_rays + 1, dtype=np.int64)
    np.cumsum(counts, out=off[1:])
    mask = np.arange(n_prim)[None, :] < counts[:, None]
    return off, cand_prim[mask], cand_tin[mask], cand_tout[mask]


def candidates_brute(rot, trans, scale, origins, dirs, tmins, tmaxs,
                     chunk: int = 4096):
    """CSR candidate intervals via exhaustive per-pair slab tests (oracle)."""
    n_rays = origins.shape[0]
    n_prim = rot.shape[0]
    if n_prim == 0:
        off = np.zeros(n_rays + 1, dtype=np.int64)
        empty = np.zeros(0, dtype=rot.dtype)
        return off, np.zeros(0, dtype=np.int64), empty, empty
    rows = []
    for r0 in range(0, n_rays, chunk):
        r1 = min(r0 + chunk, n_rays)
        o = origins[r0:r1]
        d = dirs[r0:r1]
        # Same arithmetic and evaluation order as the BVH kernel so the two
        # paths agree bit for bit.
        y0 = o[:, None, 0] - trans[None, :, 0]
        y1 = o[:, None, 1] - trans[None, :, 1]
        y2 = o[:, None, 2] - trans[None, :, 2]
        t_in = np.broadcast_to(tmins[r0:r1, None], (r1 - r0, n_prim)).copy()
        t_out = np.broadcast_to(tmaxs[r0:r1, None], (r1 - r0, n_prim)).copy()
        hit = t_out > t_in
        for a in range(3):
            oo = (rot[None, :, 0, a] * y0 + rot[None, :, 1, a] * y1
                  + rot[None, :, 2, a] * y2) / scale[None, :, a]
            dd = (rot[None, :, 0, a] * d[:, None, 0] + rot[None, :, 1, a] * d[:, None, 1]
                  + rot[None, :, 2, a] * d[:, None, 2]) / scale[None, :, a]
            par = np.abs(dd) < 1e-15
            with np.errstate(divide="ignore", invalid="ignore"):
                ta = (-1.0 - oo) / dd
                tb = (1.0 - oo) / dd
            lo = np.minimum(ta, tb)
            hi = np.maximum(ta, tb)
            hit &= np.where(par, np.abs(oo) <= 1.0, True)
            upd = hit & ~par
            t_in = np.where(upd, np.maximum(t_in, lo), t_in)
            t_out = np.where(upd, np.minimum(t_out, hi), t_out)
            hit &= t_in <= t_out
        rows.append((hit, t_in, t_out))
    counts = np.concatenate([h.sum(axis=1) for h, _, _ in rows])
    off = np.zeros(n_rays + 1, dtype=np.int64)
    np.cumsum(counts, out=off[1:])
    prim_ids = np.concatenate([np.broadcast_to(np.arange(n_prim), h.shape)[h]
                               for h, _, _ in rows])
    tins = np.concatenate([ti[h] for h, ti, _ in rows])
    touts = np.concatenate([to[h] for h, _, to in rows])
    # Row-major mask extraction already orders by prim index within a ray;
    # canonical order is (t_in, prim), so sort segments.
    ray_ids = np.repeat(np.arange(n_rays), counts)
    order = np.lexsort((prim_ids, tins, ray_ids))
    return off, prim_ids[order], tins[order], touts[order]
