"""Frame assembly: buffers, background blending, luma, image output."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from ..diffcore import ops
from ..diffcore.tensor import Tensor, as_tensor
from .camera import Camera, ray_bounds
from .march import default_step, grid_resolution, march, scene_bounds

REC709_LUMA = np.array([0.2126, 0.7152, 0.0722])


@dataclass
class FrameBuffer:
    """Linear radiance image plus per-pixel opacity."""

    rgb: np.ndarray    # (H, W, C)
    alpha: np.ndarray  # (H, W)

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb)
        self.alpha = np.asarray(self.alpha)
        if self.rgb.ndim != 3 or self.alpha.shape != self.rgb.shape[:2]:
            raise ValueError("FrameBuffer: rgb (H,W,C) and alpha (H,W) required")
        if not np.isfinite(self.rgb).all():
            raise ValueError("FrameBuffer: rgb must be finite")
        if self.alpha.size and (self.alpha.min() < 0 or self.alpha.max() > 1):
            raise ValueError("FrameBuffer: alpha must lie in [0, 1]")


def composite(rgb, alpha, background):
    """Blend foreground over a background plate: a*rgb + (1-a)*bg.

    rgb (..., C), alpha (...) same leading shape, background (..., C).
    Differentiable when given tensors; shape mismatches are rejected.
    """
    rgb = as_tensor(rgb)
    alpha = as_tensor(alpha, like=rgb)
    background = as_tensor(background, like=rgb)
    if background.shape != rgb.shape:
        raise ValueError(
            f"composite: background {background.shape} does not match {rgb.shape}")
    if alpha.shape != rgb.shape[:-1]:
        raise ValueError(f"composite: alpha {alpha.shape} does not match {rgb.shape}")
    a = ops.reshape(alpha, alpha.shape + (1,))
    return ops.add(ops.mul(a, rgb), ops.mul(ops.sub(1.0, a), background))


def to_luma(img):
    """Rec.709 luma of a linear (..., 3) image; keeps a trailing 1-channel."""
    if isinstance(img, Tensor):
        if img.shape[-1] != 3:
            raise ValueError("to_luma: last axis must be 3")
        w = as_tensor(REC709_LUMA.reshape(3, 1), like=img)
        return ops.matmul(img, w)
    img = np.asarray(img)
    if img.shape[-1] != 3:
        raise ValueError("to_luma: last axis must be 3")
    return (img @ REC709_LUMA.astype(img.dtype))[..., None]


def render_frame(camera: Camera, v_alpha, v_rgb, rotation, translation, scale,
                 background=None, step=None, use_bvh=True, deltas=None):
    """March every pixel of `camera` and blend over the background plate.

    Returns (FrameBuffer, composite) where the composite is a Tensor of
    shape (H, W, C) — or (H, W, 1) luma for monochrome cameras — that stays
    on the tape when the payloads require gradients. With no background the
    composite is the foreground over black.
    """
    va = as_tensor(v_alpha)
    origins, dirs = camera.pixel_rays()
    n_prim = va.shape[0]
    if n_prim:
        lo, hi = scene_bounds(
            rotation.data if isinstance(rotation, Tensor) else rotation,
            translation.data if isinstance(translation, Tensor) else translation,
            scale.data if isinstance(scale, Tensor) else scale)
        t0, t1 = ray_bounds(origins, dirs, lo, hi)
    else:
        t0 = t1 = np.zeros(len(origins))
    out = march(va, v_rgb, rotation, translation, scale, origins, dirs,
                t0, t1, step=step, deltas=deltas, use_bvh=use_bvh)
    h, w = camera.height, camera.width
    n_chan = out.shape[1] - 1
    rgb = ops.reshape(ops.narrow(out, 1, 0, n_chan), (h, w, n_chan))
    alpha = ops.reshape(ops.narrow(out, 1, n_chan, 1), (h, w))
    fb = FrameBuffer(rgb.data, np.clip(alpha.data, 0.0, 1.0))
    if background is None:
        bg = np.zeros((h, w, n_chan), dtype=va.data.dtype)
    else:
        bg = background if isinstance(background, Tensor) else np.asarray(background)
        if tuple(bg.shape) != (h, w, n_chan):
            raise ValueError(
                f"render_frame: background {tuple(bg.shape)} does not match "
                f"camera resolution {(h, w, n_chan)}")
    comp = composite(rgb, alpha, bg)
    if camera.is_monochrome:
        comp = to_luma(comp)
    return fb, comp


def write_png(path, img, exposure: float = 1.0) -> None:
    """8-bit PNG of a linear image: round(255 * clip(img * exposure, 0, 1)).

    No gamma on purpose: downstream display gain tests rely on pixel values
    staying proportional to radiance until the 8-bit quantization.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] != 3):
        raise ValueError(f"write_png: expected (H,W), (H,W,1) or (H,W,3), got {img.shape}")
    q = np.round(255.0 * np.clip(img * exposure, 0.0, 1.0)).astype(np.uint8)
    Image.fromarray(q, mode="L" if q.ndim == 2 else "RGB").save(path)
