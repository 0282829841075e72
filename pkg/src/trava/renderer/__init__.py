"""Differentiable volumetric renderer: march, BVH, cameras, compositing."""

from .bvh import (FlatBvh, build_bvh, candidates_brute, candidates_bvh,
                  obb_world_bounds)
from .camera import Camera, look_at, ray_bounds
from .composite import (REC709_LUMA, FrameBuffer, composite, render_frame,
                        to_luma, write_png)
from .kernels import HAVE_NUMBA
from .march import N_GRAD_TILES, default_step, grid_resolution, march, scene_bounds

__all__ = [
    "Camera", "FlatBvh", "FrameBuffer", "HAVE_NUMBA", "N_GRAD_TILES",
    "REC709_LUMA", "build_bvh", "candidates_brute", "candidates_bvh",
    "composite", "default_step", "grid_resolution", "look_at", "march",
    "obb_world_bounds", "ray_bounds", "render_frame", "scene_bounds",
    "to_luma", "write_png",
]
