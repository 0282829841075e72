"""Pinhole cameras and ray generation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Camera:
    """Calibrated pinhole camera. Axes: x right, y down, z forward."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray  # (3,3) world-from-camera
    position: np.ndarray  # (3,) camera center in world
    is_monochrome: bool = False

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.position = np.asarray(self.position, dtype=np.float64)
        if not np.allclose(self.rotation @ self.rotation.T, np.eye(3), atol=1e-8):
            raise ValueError("camera rotation must be orthonormal")

    @property
    def resolution(self):
        return (self.height, self.width)

    def pixel_rays(self):
        """Origins (H*W,3) and unit directions (H*W,3), row-major pixels."""
        xs = (np.arange(self.width) + 0.5 - self.cx) / self.fx
        ys = (np.arange(self.height) + 0.5 - self.cy) / self.fy
        gx, gy = np.meshgrid(xs, ys)
        d_cam = np.stack([gx, gy, np.ones_like(gx)], axis=-1).reshape(-1, 3)
        d_cam /= np.linalg.norm(d_cam, axis=1, keepdims=True)
        d = d_cam @ self.rotation.T
        o = np.broadcast_to(self.position, d.shape).copy()
        return o, d


def look_at(position, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """World-from-camera rotation with +z toward target, +y screen-down."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    forward = forward / np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        raise ValueError("view direction parallel to up vector")
    right /= nr
    down = np.cross(forward, right)
    return np.stack([right, down, forward], axis=1)


def ray_bounds(origins: np.ndarray, dirs: np.ndarray, scene_lo: np.ndarray,
               scene_hi: np.ndarray, inflate: float = 0.05):
    """Per-ray [t_min, t_max] against the scene AABB inflated by `inflate`.

    Rays that miss the box get t_min == t_max == 0 (the march skips them).
    """
    center = 0.5 * (scene_lo + scene_hi)
    half = 0.5 * (scene_hi - scene_lo) * (1.0 + inflate)
    lo = center - half
    hi = center + half
    with np.errstate(divide="ignore", invalid="ignore"):
        ta = (lo[None, :] - origins) / dirs
        tb = (hi[None, :] - origins) / dirs
    near = np.minimum(ta, tb)
    far = np.maximum(ta, tb)
    par = np.abs(dirs) < 1e-15
    inside = (origins >= lo[None, :]) & (origins <= hi[None, :])
    near = np.where(par, np.where(inside, -np.inf, np.inf), near)
    far = np.where(par, np.where(inside, np.inf, -np.inf), far)
    t0 = np.maximum(near.max(axis=1), 0.0)
    t1 = far.min(axis=1)
    miss = t1 <= t0
    t0 = np.where(miss, 0.0, t0)
    t1 = np.where(miss, 0.0, t1)
    return t0, t1
