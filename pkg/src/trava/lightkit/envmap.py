"""Environment maps and per-light Voronoi extraction.

Maps are longitude-latitude: pixel centers map to directions with y up,
longitude sweeping left to right from -pi to pi, latitude +pi/2 at the top
row. Extraction splits pixels into cells owned by the angularly nearest rig
light (default) or the nearest light in image space (behind a flag), then
takes the solid-angle-weighted mean radiance per cell.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .rig import LightingCondition, LightRig


@dataclass
class EnvironmentMap:
    pixels: np.ndarray  # (H, W, 3) linear radiance, float32

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float32)
        if arr.ndim == 2:
            arr = np.repeat(arr[:, :, None], 3, axis=2)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"environment map must be (H,W,3), got {arr.shape}")
        if np.any(arr < 0):
            raise ValueError("environment radiances must be non-negative")
        self.pixels = arr

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def pixel_directions(height: int, width: int) -> np.ndarray:
    """(H, W, 3) unit directions at pixel centers of a lat-long map."""
    v = (np.arange(height) + 0.5) / height
    u = (np.arange(width) + 0.5) / width
    lat = np.pi / 2 - np.pi * v  # +pi/2 top row
    lon = 2 * np.pi * u - np.pi
    cl = np.cos(lat)[:, None]
    d = np.empty((height, width, 3))
    d[:, :, 0] = cl * np.sin(lon)[None, :]
    d[:, :, 1] = np.sin(lat)[:, None]
    d[:, :, 2] = cl * np.cos(lon)[None, :]
    return d


def pixel_weights(height: int, width: int) -> np.ndarray:
    """(H, W) solid-angle weights, proportional to cos(latitude)."""
    v = (np.arange(height) + 0.5) / height
    lat = np.pi / 2 - np.pi * v
    return np.repeat(np.cos(lat)[:, None], width, axis=1)


@dataclass
class CellAssignment:
    owner: np.ndarray  # (H, W) int light index per pixel
    weight: np.ndarray  # (H, W) positive solid-angle weight per pixel
    n_lights: int

    @property
    def cell_totals(self) -> np.ndarray:
        """Per-cell total weight, accumulated in raster pixel order."""
        totals = np.zeros(self.n_lights)
        np.add.at(totals, self.owner.ravel(), self.weight.ravel())
        return totals

    @property
    def empty_cells(self) -> np.ndarray:
        counts = np.bincount(self.owner.ravel(), minlength=self.n_lights)
        return np.flatnonzero(counts == 0)


def _project_to_image(directions: np.ndarray, height: int, width: int) -> np.ndarray:
    """Light directions -> continuous (row, col) lat-long pixel coordinates."""
    x, y, z = directions[:, 0], directions[:, 1], directions[:, 2]
    lat = np.arcsin(np.clip(y, -1.0, 1.0))
    lon = np.arctan2(x, z)
    row = (np.pi / 2 - lat) / np.pi * height - 0.5
    col = (lon + np.pi) / (2 * np.pi) * width - 0.5
    return np.stack([row, col], axis=1)


def assign_cells(rig: LightRig, map_dims: tuple, mode: str = "angular",
                 chunk_rows: int = 64) -> CellAssignment:
    """Assign every lat-long pixel to a rig light.

    mode "angular" (default): nearest light by angle on the sphere.
    mode "image": nearest light in image space after projecting lights onto
    the map (longitude wraps; poles distort, kept only for comparison).
    """
    height, width = map_dims
    weight = pixel_weights(height, width)
    if mode == "angular":
        dirs = pixel_directions(height, width)
        owner = np.empty((height, width), dtype=np.int64)
        for r0 in range(0, height, chunk_rows):
            r1 = min(r0 + chunk_rows, height)
            block = dirs[r0:r1].reshape(-1, 3)
            owner[r0:r1] = np.argmax(block @ rig.directions.T, axis=1).reshape(r1 - r0, width)
    elif mode == "image":
        pos = _project_to_image(rig.directions, height, width)
        rows = np.arange(height)[:, None, None]
        cols = np.arange(width)[None, :, None]
        drow = rows - pos[None, None, :, 0]
        dcol = np.abs(cols - pos[None, None, :, 1])
        dcol = np.minimum(dcol, width - dcol)  # longitude wraps
        owner = np.argmin(drow * drow + dcol * dcol, axis=2).astype(np.int64)
    else:
        raise ValueError(f"unknown Voronoi mode {mode!r}")
    return CellAssignment(owner, weight, rig.n_lights)


def extract_lighting(env: EnvironmentMap, rig: LightRig,
                     assignment: CellAssignment | None = None,
                     mode: str = "angular") -> LightingCondition:
    """Per-light RGB intensity: weighted-average radiance over each cell.

    Empty cells produce a zero entry and a warning.
    """
    if assignment is None:
        assignment = assign_cells(rig, (env.height, env.width), mode=mode)
    if assignment.n_lights != rig.n_lights:
        raise ValueError("assignment was computed for a different rig")
    if (assignment.owner.shape != (env.height, env.width)):
        raise ValueError(f"assignment dims {assignment.owner.shape} do not match map "
                         f"({env.height}, {env.width})")
    idx = assignment.owner.ravel()
    w = assignment.weight.ravel()
    den = np.zeros(rig.n_lights)
    np.add.at(den, idx, w)
    out = np.zeros((3, rig.n_lights))
    flat = env.pixels.reshape(-1, 3).astype(np.float64)
    for c in range(3):
        num = np.zeros(rig.n_lights)
        np.add.at(num, idx, w * flat[:, c])
        out[c] = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    empty = np.flatnonzero(den == 0)
    if empty.size:
        warnings.warn(f"{empty.size} light cells received no pixels: {empty.tolist()[:8]}",
                      RuntimeWarning, stacklevel=2)
    return LightingCondition(out)
