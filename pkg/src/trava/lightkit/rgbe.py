"""Radiance RGBE (.hdr) reading.

Header: "#?RADIANCE" (or "#?RGBE"), variable assignments, blank line, then a
resolution line "-Y <H> +X <W>". Pixels are 4 bytes (r,g,b,e) with shared
exponent: value = byte * 2^(e-136). Scanlines may be stored flat or with the
new-style per-channel RLE (marker bytes 2,2 and 15-bit length).
"""

from __future__ import annotations

import numpy as np


def _decode_rle_scanline(f, width: int) -> np.ndarray:
    head = f.read(4)
    if len(head) < 4:
        raise ValueError("RGBE: truncated scanline")
    if head[0] != 2 or head[1] != 2 or ((head[2] << 8) | head[3]) != width:
        # Old-style flat scanline; head already holds the first pixel.
        rest = f.read(4 * (width - 1))
        return np.frombuffer(head + rest, dtype=np.uint8).reshape(width, 4)
    out = np.empty((4, width), dtype=np.uint8)
    for c in range(4):
        pos = 0
        while pos < width:
            n = f.read(1)[0]
            if n > 128:  # run of a repeated byte
                value = f.read(1)[0]
                count = n - 128
                out[c, pos:pos + count] = value
            else:  # literal bytes
                count = n
                chunk = f.read(count)
                out[c, pos:pos + count] = np.frombuffer(chunk, dtype=np.uint8)
            pos += count
        if pos != width:
            raise ValueError("RGBE: scanline overrun")
    return out.T.copy()


def read_rgbe(path) -> np.ndarray:
    """Load a Radiance HDR file as linear float32 (H, W, 3)."""
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if not magic.startswith(b"#?"):
            raise ValueError(f"not a Radiance file: bad magic {magic!r}")
        while True:
            line = f.readline()
            if not line:
                raise ValueError("RGBE: unexpected end of header")
            if line.strip() == b"":
                break
        res = f.readline().split()
        if len(res) != 4 or res[0] != b"-Y" or res[2] != b"+X":
            raise ValueError(f"RGBE: unsupported resolution line {res!r}")
        height, width = int(res[1]), int(res[3])
        rows = [_decode_rle_scanline(f, width) for _ in range(height)]
    rgbe = np.stack(rows)  # (H, W, 4) uint8
    e = rgbe[..., 3].astype(np.int32)
    scale = np.where(e == 0, 0.0, np.ldexp(1.0, e - 136)).astype(np.float32)
    return rgbe[..., :3].astype(np.float32) * scale[..., None]


def write_rgbe(path, img: np.ndarray) -> None:
    """Write (H,W,3) linear floats as flat (non-RLE) RGBE. Test fixture aid."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"write_rgbe: expected (H,W,3), got {img.shape}")
    peak = img.max(axis=2)
    with np.errstate(divide="ignore"):
        e = np.where(peak > 0, np.floor(np.log2(peak)) + 1, 0).astype(np.int32)
    scale = np.where(peak > 0, np.ldexp(1.0, 8 - e), 0.0)
    mant = np.clip(img * scale[..., None], 0, 255).astype(np.uint8)
    rgbe = np.concatenate([mant, np.where(peak > 0, e + 128, 0)[..., None].astype(np.uint8)],
                          axis=2)
    with open(path, "wb") as f:
        f.write(b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n")
        f.write(f"-Y {img.shape[0]} +X {img.shape[1]}\n".encode("ascii"))
        f.write(rgbe.tobytes())
