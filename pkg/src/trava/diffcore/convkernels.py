"""im2col/col2im kernels shared by conv2d and conv_transpose2d.

im2col uses stride tricks (zero-copy view + reshape); col2im is the
scatter-add inverse and runs through numba when available, otherwise a
numpy add.at fallback. Both are deterministic single-threaded.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False


def conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(N,C,H,W) -> (N, C*kh*kw, Ho*Wo) patch matrix."""
    n, c, h, w = x.shape
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(w, kw, stride, pad)
    if pad > 0:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    sn, sc, sh, sw = x.strides
    view = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, kh, kw, ho, wo),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return np.ascontiguousarray(view).reshape(n, c * kh * kw, ho * wo)


if _HAVE_NUMBA:

    @njit(cache=True)
    def _col2im_core(cols, n, c, h, w, kh, kw, stride, pad, ho, wo):  # pragma: no cover - jitted
        out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = ch * kh * kw + i * kw + j
                        for oy in range(ho):
                            iy = oy * stride + i
                            base = oy * wo
                            for ox in range(wo):
                                out[b, ch, iy, ox * stride + j] += cols[b, row, base + ox]
        if pad > 0:
            return out[:, :, pad:h + pad, pad:w + pad].copy()
        return out

    def col2im(cols, n, c, h, w, kh, kw, stride, pad):
        ho = conv_out_size(h, kh, stride, pad)
        wo = conv_out_size(w, kw, stride, pad)
        return _col2im_core(np.ascontiguousarray(cols), n, c, h, w, kh, kw, stride, pad, ho, wo)

else:

    def col2im(cols, n, c, h, w, kh, kw, stride, pad):
        ho = conv_out_size(h, kh, stride, pad)
        wo = conv_out_size(w, kw, stride, pad)
        out = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
        cols6 = cols.reshape(n, c, kh, kw, ho, wo)
        for i in range(kh):
            for j in range(kw):
                out[:, :, i:i + ho * stride:stride, j:j + wo * stride:stride] += cols6[:, :, i, j]
        if pad > 0:
            out = out[:, :, pad:h + pad, pad:w + pad]
        return np.ascontiguousarray(out)


def conv2d_forward(x, w, stride, pad):
    """x (N,Cin,H,W), w (Cout,Cin,kh,kw) -> (N,Cout,Ho,Wo) plus the col cache."""
    n = x.shape[0]
    cout, cin, kh, kw = w.shape
    ho = conv_out_size(x.shape[2], kh, stride, pad)
    wo = conv_out_size(x.shape[3], kw, stride, pad)
    cols = im2col(x, kh, kw, stride, pad)
    out = np.matmul(w.reshape(cout, -1), cols)
    return out.reshape(n, cout, ho, wo), cols


def conv2d_backward(g, x_shape, w, cols, stride, pad):
    """Gradients of conv2d wrt input and weight."""
    n, cin, h, wdt = x_shape
    cout, _, kh, kw = w.shape
    g2 = g.reshape(n, cout, -1)
    gw = np.einsum("nop,nkp->ok", g2, cols).reshape(w.shape)
    gcols = np.matmul(w.reshape(cout, -1).T, g2)
    gx = col2im(gcols, n, cin, h, wdt, kh, kw, stride, pad)
    return gx, gw


def conv_transpose2d_forward(x, w, stride, pad):
    """x (N,Cin,H,W), w (Cin,Cout,kh,kw) -> (N,Cout,Ho,Wo).

    Ho = (H-1)*stride - 2*pad + kh. Implemented as the adjoint of conv2d.
    """
    n, cin, h, wdt = x.shape
    _, cout, kh, kw = w.shape
    ho = (h - 1) * stride - 2 * pad + kh
    wo = (wdt - 1) * stride - 2 * pad + kw
    cols = np.matmul(w.reshape(cin, -1).T, x.reshape(n, cin, -1))
    out = col2im(cols, n, cout, ho, wo, kh, kw, stride, pad)
    return out


def conv_transpose2d_backward(g, x, w, stride, pad):
    n, cin, h, wdt = x.shape
    _, cout, kh, kw = w.shape
    gcols = im2col(g, kh, kw, stride, pad)
    gx = np.matmul(w.reshape(cin, -1), gcols).reshape(x.shape)
    gw = np.einsum("ncp,nkp->ck", x.reshape(n, cin, -1), gcols).reshape(w.shape)
    return gx, gw
