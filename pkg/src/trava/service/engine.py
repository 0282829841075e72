"""Checkpoint-backed render engine shared by the CLI and the live service.

The engine owns one read-only model plus the light rig and alignment the
trainer stored alongside it; render calls build no gradient tape and touch
no shared mutable state, so a worker pool may run them concurrently.
"""

from __future__ import annotations

import io
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from PIL import Image

from trava import diffcore as dc
from trava.avatarnet import compose_transforms
from trava.checkpoint import load_checkpoint
from trava.geometry import (apply_rigid, build_blendshape_basis, build_layout,
                            make_template_sphere, mount_frames)
from trava.lightkit import (EnvironmentMap, LightRig, extract_lighting,
                            full_on_pattern, read_pfm, read_rgbe)
from trava.renderer import render_frame
from trava.synthcap.capture import make_camera
from trava.training import MeshAlignment

from .state import SessionState

_ENV_SUFFIXES = (".pfm", ".hdr")


def load_envmap(path) -> EnvironmentMap:
    """Read a lat-long radiance map; the format follows the extension."""
    suffix = os.path.splitext(str(path))[1].lower()
    if suffix == ".pfm":
        return EnvironmentMap(np.asarray(read_pfm(path), dtype=np.float64))
    if suffix == ".hdr":
        return EnvironmentMap(np.asarray(read_rgbe(path), dtype=np.float64))
    raise ValueError(f"{path}: environment maps are .pfm or .hdr")


def _worker_count(threads) -> int | None:
    if threads is not None:
        return int(threads)
    env = os.environ.get("TRAVA_THREADS", "").strip()
    if not env:
        return None
    n = int(env)
    if n < 1:
        raise ValueError(f"TRAVA_THREADS must be positive, got {env}")
    return n


class RenderEngine:
    def __init__(self, checkpoint, envdir=None, threads=None):
        bundle = load_checkpoint(checkpoint)
        self.net = bundle.net
        self.metadata = bundle.metadata
        self.step = bundle.step
        extras = bundle.extras
        for key in ("rig/directions", "rig/max_intensity", "align/rotation",
                    "align/translation", "align/scale"):
            if key not in extras:
                raise ValueError(
                    f"{checkpoint}: missing {key!r}; render needs a trainer "
                    "checkpoint (rig and alignment ride in the extras)")
        self.rig = LightRig(
            directions=np.asarray(extras["rig/directions"], dtype=np.float64),
            max_intensity=np.asarray(extras["rig/max_intensity"],
                                     dtype=np.float64))
        alignment = MeshAlignment(
            rotation=np.asarray(extras["align/rotation"], dtype=np.float64),
            translation=np.asarray(extras["align/translation"], dtype=np.float64),
            scale=float(extras["align/scale"][0]))
        cfg = self.net.config
        self.template = make_template_sphere()
        self.layout = build_layout(self.template, n_prim=cfg.n_prim, m=cfg.m)
        self.basis = build_blendshape_basis(self.template)
        self.base_vertices = alignment.apply(
            self.template.vertices).astype(self.net.dtype)
        self.mesh_scale = alignment.scale
        self.envmaps: dict = {}
        if envdir is not None:
            for fname in sorted(os.listdir(envdir)):
                if os.path.splitext(fname)[1].lower() not in _ENV_SUFFIXES:
                    continue
                env_id = os.path.splitext(fname)[0]
                if env_id in self.envmaps:
                    raise ValueError(f"{envdir}: duplicate environment map id "
                                     f"{env_id!r}")
                self.envmaps[env_id] = os.path.join(envdir, fname)
        self._env_vectors: dict = {}
        self._env_pixels: dict = {}
        self.pool = ThreadPoolExecutor(max_workers=_worker_count(threads))

    # ---- session-facing surface -------------------------------------------

    @property
    def latent_dim(self) -> int:
        return self.net.config.latent

    @property
    def n_lights(self) -> int:
        return self.net.config.n_lights

    @property
    def n_blend(self) -> int:
        return self.basis.n_shapes

    @property
    def frame_size(self) -> int:
        return self.net.config.image_size

    def meta(self) -> dict:
        return {
            "latent_dim": self.latent_dim,
            "n_lights": self.n_lights,
            "n_blend": self.n_blend,
            "image_size": self.frame_size,
            "max_intensity": float(self.rig.max_intensity.max()),
            "step": self.step,
            "envmaps": sorted(self.envmaps),
        }

    def initial_state(self) -> SessionState:
        light = np.repeat(full_on_pattern(self.rig).intensities, 3, axis=0)
        return SessionState(z=np.zeros(self.latent_dim, dtype=np.float32),
                            blend=None, light=light.astype(np.float32))

    def env_vector(self, env_id) -> np.ndarray:
        """Per-channel rig intensities for a registered map, gain 1."""
        if env_id not in self.envmaps:
            raise ValueError(f"unknown environment map {env_id!r}")
        if env_id not in self._env_vectors:
            cond = extract_lighting(self._pixels(env_id), self.rig)
            self._env_vectors[env_id] = cond.intensities.astype(np.float32)
        return self._env_vectors[env_id]

    def extract_vector(self, env: EnvironmentMap) -> np.ndarray:
        """Extraction for a map supplied as a file rather than an id."""
        return extract_lighting(env, self.rig).intensities.astype(np.float32)

    def _pixels(self, env_id) -> EnvironmentMap:
        if env_id not in self._env_pixels:
            self._env_pixels[env_id] = load_envmap(self.envmaps[env_id])
        return self._env_pixels[env_id]

    # ---- rendering ---------------------------------------------------------

    def render_state(self, state: SessionState) -> np.ndarray:
        """Pre-clip linear radiance (H, W, 3) over the service's black plate."""
        dt = self.net.dtype
        cfg = self.net.config
        cam = make_camera(0, "viewer", state.az, state.el, state.dist,
                          resolution=cfg.image_size).camera
        z = dc.Tensor(np.asarray(state.z, dtype=dt))
        with dc.no_grad():
            if state.blend is None:
                dv = self.net.decode_mesh(z)
            else:
                disp = (state.blend.astype(np.float64) @ self.basis.basis)
                dv = dc.Tensor((disp.reshape(-1, 3) * self.mesh_scale).astype(dt))
            world = apply_rigid(dc.Tensor(self.base_vertices), dv,
                                dc.Tensor(np.eye(3, dtype=dt)),
                                dc.Tensor(np.zeros(3, dtype=dt)))
            frames = mount_frames(world, self.template, self.layout)
            rot, tra, sca = compose_transforms(frames, self.net.decode_transform(z))
            va = self.net.decode_opacity(z)
            # rest pose: the head frame is the world frame, so the appearance
            # conditioning direction is the bare camera bearing
            d = cam.position - np.asarray(world.data).mean(axis=0)
            d = (d / np.linalg.norm(d)).astype(dt)
            vr = self.net.decode_appearance_rgb(z, state.light.astype(dt), d)
            _, comp = render_frame(cam, va, vr, rot, tra, sca)
        return np.asarray(comp.data, dtype=np.float64)

    def render_png(self, state: SessionState) -> bytes:
        """Exposure-scaled 8-bit PNG; quantization matches the file writer."""
        img = self.render_state(state)
        q = np.round(255.0 * np.clip(img * state.exposure, 0.0, 1.0))
        buf = io.BytesIO()
        Image.fromarray(q.astype(np.uint8), mode="RGB").save(buf, format="PNG")
        return buf.getvalue()

    def thumb_png(self, env_id, width: int = 64) -> bytes:
        if env_id not in self.envmaps:
            raise KeyError(env_id)
        px = np.asarray(self._pixels(env_id).pixels, dtype=np.float64)
        tone = px / (1.0 + px)                 # HDR maps need a bounded preview
        q = np.round(255.0 * np.clip(tone, 0.0, 1.0)).astype(np.uint8)
        img = Image.fromarray(q, mode="RGB")
        height = max(1, round(width * px.shape[0] / px.shape[1]))
        buf = io.BytesIO()
        img.resize((width, height), Image.BILINEAR).save(buf, format="PNG")
        return buf.getvalue()
