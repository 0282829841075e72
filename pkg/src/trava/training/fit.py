"""First-frame template alignment from multi-view silhouettes.

Each camera contributes a foreground mask (pixels that differ from its
scaled background plate), reduced to two moments: the centroid ray and the
equivalent-disk angular radius. Centroid rays triangulate the body center;
each disk radius gives an absolute size estimate via the tangent-cone
relation sin(theta) = r / distance. Rotation stays identity: a silhouette
of a near-spherical subject does not constrain it, and the decoders own
rotation from step one anyway.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MeshAlignment:
    rotation: np.ndarray     # (3,3), identity at desk scale
    translation: np.ndarray  # (3,)
    scale: float

    def apply(self, vertices: np.ndarray) -> np.ndarray:
        v = np.asarray(vertices, dtype=np.float64)
        return self.scale * (v @ self.rotation.T) + self.translation


def _silhouette(img, background, gain, threshold):
    diff = np.abs(np.asarray(img, dtype=np.float64)
                  - gain * np.asarray(background, dtype=np.float64))
    if diff.ndim == 3:
        diff = diff.max(axis=2)
    return diff > threshold


def fit_initial_mesh(dataset, template, frame: int = 0,
                     threshold: float = 5e-3) -> MeshAlignment:
    """Rigid + uniform-scale placement of `template` for a capture frame.

    Uses every training camera of `dataset`. Raises if any camera sees an
    empty silhouette (wrong threshold or a broken plate, both worth a loud
    failure rather than a garbage alignment).
    """
    record = None
    for r in dataset.frames:
        if r.index == frame:
            record = r
            break
    if record is None:
        raise ValueError(f"frame {frame} is not in the training split")

    mats = []
    rhs = []
    rays = []
    for cc in dataset.train_cameras():
        cam = cc.camera
        mask = _silhouette(dataset.load_image(record, cc),
                           dataset.background(cc), record.bg_gain, threshold)
        if not mask.any():
            raise ValueError(f"empty silhouette in {cc.name} at frame {frame}")
        vv, uu = np.nonzero(mask)
        cu, cv = uu.mean() + 0.5, vv.mean() + 0.5
        d_cam = np.array([(cu - cam.cx) / cam.fx, (cv - cam.cy) / cam.fy, 1.0])
        d = cam.rotation @ (d_cam / np.linalg.norm(d_cam))
        proj = np.eye(3) - np.outer(d, d)
        mats.append(proj)
        rhs.append(proj @ cam.position)
        r_px = np.sqrt(mask.sum() / np.pi)
        f = np.sqrt(cam.fx * cam.fy)
        rays.append((cam.position, r_px / np.sqrt(f * f + r_px * r_px)))

    center = np.linalg.solve(np.sum(mats, axis=0), np.sum(rhs, axis=0))
    radii = [np.linalg.norm(center - pos) * sin_theta
             for pos, sin_theta in rays]

    v = np.asarray(template.vertices, dtype=np.float64)
    v = v - v.mean(axis=0)
    template_radius = float(np.linalg.norm(v, axis=1).mean())
    return MeshAlignment(rotation=np.eye(3), translation=center,
                         scale=float(np.mean(radii)) / template_radius)
