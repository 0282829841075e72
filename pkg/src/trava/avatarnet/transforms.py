"""Per-primitive corrective transforms and their composition onto mounted frames."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from trava import diffcore as dc
from trava.diffcore import ops
from trava.geometry.frames import MountedFrames


@dataclass
class PrimitiveCorrections:
    """Decoded transform deltas, all relative to the primitive's mesh frame.

    raw is the (P,9) head output (axis-angle, translation, log-scale) before
    parameterization; the rotation/translation regularizer reads it directly.
    """

    rotation: dc.Tensor  # (P,3,3)
    translation: dc.Tensor  # (P,3), in scaled frame-local units
    scale: dc.Tensor  # (P,3), multiplicative, positive
    raw: dc.Tensor  # (P,9)


def identity_corrections(n_prim: int, dtype=np.float32) -> PrimitiveCorrections:
    """Corrections that leave the mounted frames untouched."""
    eye = np.broadcast_to(np.eye(3, dtype=dtype), (n_prim, 3, 3)).copy()
    return PrimitiveCorrections(
        rotation=dc.Tensor(eye),
        translation=dc.Tensor(np.zeros((n_prim, 3), dtype=dtype)),
        scale=dc.Tensor(np.ones((n_prim, 3), dtype=dtype)),
        raw=dc.Tensor(np.zeros((n_prim, 9), dtype=dtype)),
    )


def compose_transforms(frames: MountedFrames, delta: PrimitiveCorrections):
    """World transforms: R = R_f dR, t = t_f + R_f (s_f * dt), s = s_f * ds.

    The translation delta acts in the frame's scaled local units, so a unit
    correction moves a primitive by one footprint extent regardless of mesh
    size. Returns (rotation (P,3,3), translation (P,3), scale (P,3)).
    """
    p = frames.origin.shape[0]
    rot = ops.matmul(frames.rotation, delta.rotation)
    local = ops.mul(frames.scale, delta.translation)
    moved = ops.matmul(frames.rotation, ops.reshape(local, (p, 3, 1)))
    trans = ops.add(frames.origin, ops.reshape(moved, (p, 3)))
    scale = ops.mul(frames.scale, delta.scale)
    return rot, trans, scale
