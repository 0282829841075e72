"""Portable float map (PFM) reading and writing.

Layout: ASCII header of three tokens separated by single whitespace
("PF" color / "Pf" grayscale, "<width> <height>", "<scale>"), then raw
float32 samples. A negative scale means little-endian payload; rows are
stored bottom-to-top. We always write little-endian (scale -1.0).
"""

from __future__ import annotations

import numpy as np


def read_pfm(path) -> np.ndarray:
    """Load a PFM file as float32, shape (H, W) or (H, W, 3), top row first."""
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic == b"PF":
            channels = 3
        elif magic == b"Pf":
            channels = 1
        else:
            raise ValueError(f"not a PFM file: bad magic {magic!r}")
        dims = f.readline().split()
        if len(dims) != 2:
            raise ValueError("PFM: malformed dimensions line")
        width, height = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        if scale == 0:
            raise ValueError("PFM: scale must be non-zero")
        endian = "<" if scale < 0 else ">"
        count = width * height * channels
        raw = f.read(count * 4)
        if len(raw) != count * 4:
            raise ValueError(f"PFM: truncated payload, wanted {count * 4} bytes got {len(raw)}")
        data = np.frombuffer(raw, dtype=endian + "f4").astype(np.float32)
    if channels == 1:
        img = data.reshape(height, width)
    else:
        img = data.reshape(height, width, 3)
    # Rows are bottom-to-top on disk.
    img = img[::-1].copy()
    if abs(scale) != 1.0:
        img *= abs(scale)
    return img


def write_pfm(path, img: np.ndarray) -> None:
    """Write float32 image (H,W) or (H,W,3), top row first in memory."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim == 2:
        magic = b"Pf"
    elif img.ndim == 3 and img.shape[2] == 3:
        magic = b"PF"
    else:
        raise ValueError(f"write_pfm: expected (H,W) or (H,W,3), got {img.shape}")
    height, width = img.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + b"\n")
        f.write(f"{width} {height}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(img[::-1]).astype("<f4").tobytes())
