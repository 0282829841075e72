"""Optimization loop: encode, decode, render all supervised views, step.

Every random draw is keyed by (seed, stream constant, step), never by
generator state carried across steps, so a run resumed from a checkpoint
replays the exact tail of the uninterrupted run.
"""

from __future__ import annotations

import csv
import json
import os
import time

import numpy as np

from trava import diffcore as dc
from trava.avatarnet import AvatarConfig, AvatarNet, compose_transforms, normalize_views
from trava.checkpoint import load_checkpoint, save_checkpoint
from trava.diffcore import Adam, ops
from trava.geometry import (apply_rigid, build_blendshape_basis, build_laplacian,
                            build_layout, make_template_sphere, mount_frames)
from trava.renderer import render_frame
from trava.synthcap import load_dataset

from .config import TrainConfig, config_items, parse_config
from .fit import fit_initial_mesh
from .losses import PatchDiscriminator, PerceptualExtractor, loss_image, loss_reg

LOG_COLUMNS = ("step", "l1", "vgg", "gan", "lap", "p_r", "vol", "kld",
               "total", "wall_ms")

# Stream constants separating the per-step random draws.
_STREAM_FRAME = 11
_STREAM_ENCODE = 3
_STREAM_JITTER = 7


def _stream(seed, *key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *key])))


class Trainer:
    """Owns the network, optimizer, and per-step bookkeeping for one run."""

    def __init__(self, config: TrainConfig, dataset=None):
        self.config = config
        self.dataset = dataset if dataset is not None else load_dataset(config.dataset_dir)
        ds = self.dataset
        front = ds.camera_by_role("frontal").camera

        self.template = make_template_sphere()
        self.avatar_config = AvatarConfig(
            n_prim=config.n_prim, m=config.grid_m, latent=config.latent_dim,
            image_size=front.width, n_lights=ds.rig.n_lights,
            n_mesh=self.template.n_vertices, enc_width=config.enc_width,
            enc_fc=config.enc_fc, mesh_hidden=config.mesh_hidden,
            xform_width=config.xform_width, opacity_width=config.opacity_width,
            app_width=config.app_width, appearance_mode=config.appearance_mode,
            alpha_gain=config.alpha_gain)
        self.net = AvatarNet(self.avatar_config, dtype=np.float32, seed=config.seed)
        self.opt = Adam(self.net.params.tensors(), lr=config.lr)

        self.alignment = fit_initial_mesh(ds, self.template)
        self.base_vertices = self.alignment.apply(self.template.vertices).astype(np.float32)
        self.layout = build_layout(self.template, n_prim=config.n_prim, m=config.grid_m)
        self.lap = build_laplacian(self.template, dtype=np.float32)
        self.basis = build_blendshape_basis(self.template)
        tri = self.template.triangles
        self.vertex_weights = self.template.weight_mask
        self.prim_weights = self.template.weight_mask[tri[self.layout.face_index]].mean(axis=1)

        self._enc_cams = [ds.camera_by_role(r) for r in ("frontal", "left", "right")]
        self._train_cams = ds.train_cameras()
        # Plates are composited pre-luma, so mono backgrounds ride along as gray RGB.
        self._backgrounds = {}
        for cc in self._train_cams:
            bg = ds.background(cc).astype(np.float32)
            if bg.ndim == 2:
                bg = np.repeat(bg[:, :, None], 3, axis=2)
            self._backgrounds[cc.index] = bg

        self._extractors = {}
        self.discriminator = None
        self.d_opt = None
        if config.weights.gan > 0:
            self.discriminator = PatchDiscriminator(channels=3, seed=config.seed + 1)
            self.d_opt = Adam(self.discriminator.params.tensors(), lr=config.lr)
        self.step = 0

    # -- per-step pieces -------------------------------------------------

    def _extractor(self, channels: int) -> PerceptualExtractor:
        if channels not in self._extractors:
            self._extractors[channels] = PerceptualExtractor(channels=channels)
        return self._extractors[channels]

    def _pick_frame(self, step: int):
        rng = _stream(self.config.seed, _STREAM_FRAME, step)
        return self.dataset.frames[int(rng.integers(len(self.dataset.frames)))]

    def _encode_seed(self, step: int):
        if not self.config.sample_latent:
            return None
        return int(np.random.SeedSequence(
            [self.config.seed, _STREAM_ENCODE, step]).generate_state(1)[0])

    def _deltas(self, step: int, cam_index: int, n_rays: int):
        if not self.config.jitter:
            return None
        rng = _stream(self.config.seed, _STREAM_JITTER, step, cam_index)
        return rng.random(n_rays)

    def _view_direction(self, enc, world_vertices) -> np.ndarray:
        """Head-local direction toward the frontal camera, gradient-free.

        One appearance decode is shared by all cameras of a frame, so the
        conditioning direction is a property of the frame, not of the view
        being rendered.
        """
        center = np.asarray(world_vertices.data, dtype=np.float64).mean(axis=0)
        d = self._enc_cams[0].camera.position - center
        d = d / np.linalg.norm(d)
        local = np.asarray(enc.rotation.data, dtype=np.float64).T @ d
        return (local / np.linalg.norm(local)).astype(self.net.dtype)

    def train_step(self) -> dict:
        """One optimization step; returns the raw component breakdown."""
        t0 = time.perf_counter()
        cfg = self.config
        step = self.step
        rec = self._pick_frame(step)
        ds = self.dataset

        views = normalize_views([ds.load_image(rec, cc) for cc in self._enc_cams])
        enc, z = self.net.encode(views, seed=self._encode_seed(step))
        dv = self.net.decode_mesh(z)
        # Regularizers act on the pre-rigid shape; the blendshape span covers
        # it exactly at init, so only genuine deformation pays.
        shape_v = ops.add(dc.Tensor(self.base_vertices), dv)
        world_v = apply_rigid(self.base_vertices, dv, enc.rotation, enc.translation)
        frames = mount_frames(world_v, self.template, self.layout)
        corr = self.net.decode_transform(z)
        rot, tra, sca = compose_transforms(frames, corr)
        va = self.net.decode_opacity(z)

        lights3 = np.repeat(rec.lights[None, :], 3, axis=0).astype(self.net.dtype)
        d = self._view_direction(enc, world_v)
        vr = self.net.decode_appearance_rgb(z, lights3, d)

        img_terms = []
        img_comp = {"l1": 0.0, "vgg": 0.0, "gan": 0.0}
        gan_pairs = []
        for cc in self._train_cams:
            cam = cc.camera
            bg = self._backgrounds[cc.index] * np.float32(rec.bg_gain)
            deltas = self._deltas(step, cc.index, cam.width * cam.height)
            _, comp = render_frame(cam, va, vr, rot, tra, sca,
                                   background=bg, deltas=deltas)
            target = ds.load_image(rec, cc)
            if target.ndim == 2:
                target = target[:, :, None]
            channels = comp.shape[-1]
            disc = self.discriminator if channels == 3 else None
            term, parts = loss_image(comp, target, cfg.weights,
                                     extractor=self._extractor(channels),
                                     discriminator=disc)
            img_terms.append(term)
            for k in img_comp:
                img_comp[k] += parts[k] / len(self._train_cams)
            if disc is not None:
                gan_pairs.append((target, np.array(comp.data, copy=True)))

        img_total = img_terms[0]
        for term in img_terms[1:]:
            img_total = ops.add(img_total, term)
        img_total = ops.scale(img_total, 1.0 / len(self._train_cams))

        reg_total, reg_comp = loss_reg(corr, sca, enc.mu, enc.sigma, shape_v,
                                       self.basis, self.lap, self.vertex_weights,
                                       self.prim_weights, cfg.weights)
        total = ops.add(img_total, reg_total)
        value = float(total.data)

        components = dict(img_comp)
        components.update(reg_comp)
        components["total"] = value
        if not all(np.isfinite(v) for v in components.values()):
            self._persist_failure(step, components)
            raise RuntimeError(f"non-finite loss at step {step}: {components}")

        dc.backward(total)
        self.opt.step()
        self.net.params.zero_grad()
        if gan_pairs:
            self._discriminator_step(gan_pairs)

        self.step = step + 1
        components["wall_ms"] = (time.perf_counter() - t0) * 1e3
        return components

    def _discriminator_step(self, pairs):
        # Alternating update on detached renders; softplus keeps it bounded.
        self.discriminator.params.zero_grad()
        terms = [self.discriminator.loss(dc.Tensor(real), dc.Tensor(fake))
                 for real, fake in pairs]
        d_total = terms[0]
        for term in terms[1:]:
            d_total = ops.add(d_total, term)
        dc.backward(ops.scale(d_total, 1.0 / len(terms)))
        self.d_opt.step()
        self.discriminator.params.zero_grad()

    def _persist_failure(self, step: int, components: dict) -> None:
        if not self.config.out_dir:
            return
        os.makedirs(self.config.out_dir, exist_ok=True)
        path = os.path.join(self.config.out_dir, f"failure_step{step:06d}.json")
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"step": step, "components": components}, f, indent=2)

    # -- logging and persistence ------------------------------------------

    def _log_path(self) -> str:
        return os.path.join(self.config.out_dir, "train_log.csv")

    def _log_row(self, step: int, components: dict) -> None:
        path = self._log_path()
        fresh = not os.path.exists(path) or os.path.getsize(path) == 0
        with open(path, "a", encoding="utf-8", newline="") as f:
            w = csv.writer(f)
            if fresh:
                w.writerow(LOG_COLUMNS)
            w.writerow([step] + [f"{components[k]:.10g}" for k in LOG_COLUMNS[1:]])

    def checkpoint_path(self, step=None) -> str:
        step = self.step if step is None else step
        return os.path.join(self.config.out_dir, f"ckpt_{step:06d}.trvc")

    def save(self, path=None) -> str:
        path = path or self.checkpoint_path()
        metadata = {"step": str(self.step)}
        metadata.update({f"cfg/{k}": v for k, v in config_items(self.config).items()})
        extras = {
            "align/rotation": self.alignment.rotation,
            "align/translation": self.alignment.translation,
            "align/scale": np.asarray([self.alignment.scale]),
            # the render service relights from the checkpoint alone
            "rig/directions": self.dataset.rig.directions,
            "rig/max_intensity": np.asarray(self.dataset.rig.max_intensity),
        }
        if self.discriminator is not None:
            extras.update({f"disc/{k}": v
                           for k, v in self.discriminator.params.state_dict().items()})
            extras.update({f"dopt/{k}": v
                           for k, v in self.d_opt.state_dict().items()})
        save_checkpoint(path, self.net, optimizer=self.opt, extras=extras,
                        metadata=metadata)
        return path

    @classmethod
    def resume(cls, path, dataset=None) -> "Trainer":
        """Rebuild a trainer mid-run; the continuation is bit-identical."""
        bundle = load_checkpoint(path)
        lines = [f"{k[len('cfg/'):]} = {v}" for k, v in sorted(bundle.metadata.items())
                 if k.startswith("cfg/")]
        config = parse_config("\n".join(lines))
        trainer = cls(config, dataset)
        trainer.net.params.load_state_dict(bundle.net.params.state_dict())
        if bundle.adam_state:
            trainer.opt.load_state_dict(bundle.adam_state)
        disc = {k[len("disc/"):]: v for k, v in bundle.extras.items()
                if k.startswith("disc/")}
        if disc and trainer.discriminator is not None:
            trainer.discriminator.params.load_state_dict(disc)
            trainer.d_opt.load_state_dict(
                {k[len("dopt/"):]: v for k, v in bundle.extras.items()
                 if k.startswith("dopt/")})
        trainer.step = bundle.step
        return trainer

    def run(self) -> list:
        """Train to config.steps, checkpointing on the configured cadence.

        Returns the checkpoint paths written, final checkpoint last.
        """
        cfg = self.config
        os.makedirs(cfg.out_dir, exist_ok=True)
        paths = []
        while self.step < cfg.steps:
            components = self.train_step()
            self._log_row(self.step, components)
            if self.step % cfg.checkpoint_every == 0 or self.step == cfg.steps:
                paths.append(self.save())
        return paths


def train(config: TrainConfig, dataset=None) -> list:
    return Trainer(config, dataset).run()
