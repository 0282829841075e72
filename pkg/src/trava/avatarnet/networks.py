"""Encoder/decoder networks for the relightable avatar.

The appearance decoder keeps lighting on a separate algebraic track: the
light vector enters through a bias-free fully-connected layer and then flows
only through bias-free, activation-free transposed convolutions, modulated at
each stage by (1 + nonlinear features). Everything the light meets is a
linear map, so mixing light vectors mixes the decoded radiance exactly;
audit.audit_light_path enforces the shape of that graph, not just its
numerics.

Grids decode as 2D slabs: primitives tile a rows x cols image (the same
row-major order the UV layout uses), each primitive owning an M x M tile per
channel, with the M channels being local-x slices. Slabs carve into flat
(P, M^3) grids matching the renderer's (ix*M + iy)*M + iz indexing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from trava import diffcore as dc
from trava.diffcore import ops
from trava.renderer.composite import REC709_LUMA

from .params import ParameterStore
from .rotations import rotation_from_6d, rotation_from_axis_angle
from .transforms import PrimitiveCorrections


def _pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class AvatarConfig:
    """Architecture hyperparameters. Defaults are the desk-scale setup;
    paper-scale values (16384 primitives, 256 latents, 7306 vertices) plug in
    through the same fields."""

    n_prim: int = 256
    m: int = 8
    latent: int = 64
    image_size: int = 128
    n_lights: int = 356
    n_mesh: int = 1026
    enc_width: int = 16
    enc_fc: int = 256
    mesh_hidden: int = 256
    xform_width: int = 64
    opacity_width: int = 64
    app_width: int = 32
    alpha_gain: float = 20.0
    appearance_mode: str = "linear"

    def __post_init__(self):
        if self.appearance_mode not in ("linear", "concat"):
            raise ValueError(f"appearance_mode must be 'linear' or 'concat', "
                             f"got {self.appearance_mode!r}")
        if self.n_prim < 1:
            raise ValueError("n_prim must be positive")
        if self.m < 2 or not _pow2(self.m):
            raise ValueError(f"m must be a power of two >= 2, got {self.m}")
        if self.image_size < 8 or not _pow2(self.image_size):
            raise ValueError(f"image_size must be a power of two >= 8, got {self.image_size}")
        for field in ("latent", "n_lights", "n_mesh", "enc_width", "enc_fc",
                      "mesh_hidden", "xform_width", "opacity_width", "app_width"):
            if getattr(self, field) < 1:
                raise ValueError(f"{field} must be positive")
        if self.alpha_gain <= 0:
            raise ValueError("alpha_gain must be positive")

    @property
    def grid_shape(self) -> tuple:
        """Primitive tiling of the slab image, rows x cols, near-square."""
        rows = math.isqrt(self.n_prim)
        while self.n_prim % rows:
            rows -= 1
        return rows, self.n_prim // rows

    @property
    def n_stages(self) -> int:
        """Upsampling stages per decoder; each doubles, so 2^stages = m."""
        return self.m.bit_length() - 1

    @property
    def n_downs(self) -> int:
        """Encoder downsampling steps, image_size -> 4x4."""
        return self.image_size.bit_length() - 3

    def enc_channels(self) -> list:
        w = self.enc_width
        return [min(w << i, 8 * w) for i in range(self.n_downs)]

    def stage_channels(self, base: int) -> list:
        return [max(4, base >> i) for i in range(self.n_stages)]


@dataclass
class EncoderOutput:
    rotation: dc.Tensor  # (3,3) head pose, orthonormal with det +1
    translation: dc.Tensor  # (3,)
    mu: dc.Tensor  # (latent,)
    sigma: dc.Tensor  # (latent,), strictly positive


def normalize_views(views):
    """Grayscale + per-view zero-mean/unit-variance, the encoder's input form.

    Accepts three (H,W) or (H,W,3) arrays; color collapses through the
    Rec. 709 luma weights. A variance floor keeps flat frames finite.
    """
    out = []
    for v in views:
        a = np.asarray(v, dtype=np.float64)
        if a.ndim == 3 and a.shape[-1] == 3:
            a = a @ REC709_LUMA
        if a.ndim != 2:
            raise ValueError(f"views must be (H,W) or (H,W,3), got {a.shape}")
        out.append((a - a.mean()) / max(float(a.std()), 1e-6))
    if len(out) != 3:
        raise ValueError(f"expected 3 views, got {len(out)}")
    if len({o.shape for o in out}) != 1:
        raise ValueError("views must share one resolution")
    return np.stack(out)


class AvatarNet:
    """All avatar networks plus their parameters.

    Weights are created eagerly in a fixed order, so state_dict() is complete
    from construction and equal seeds give bit-identical networks.
    """

    def __init__(self, config: AvatarConfig | None = None, dtype=np.float32,
                 seed: int = 0):
        self.config = config or AvatarConfig()
        self.params = ParameterStore(seed=seed, dtype=dtype)
        self._build()

    @property
    def dtype(self):
        return self.params.dtype

    # -- construction ------------------------------------------------------

    def _build(self):
        cfg = self.config
        p = self.params
        rows, cols = cfg.grid_shape

        chans = [3] + cfg.enc_channels()
        for i in range(cfg.n_downs):
            p.orthogonal(f"enc/conv{i}/w", (chans[i + 1], chans[i], 4, 4))
            p.zeros(f"enc/conv{i}/b", (chans[i + 1],))
        flat = chans[-1] * 16
        p.orthogonal("enc/fc/w", (cfg.enc_fc, flat))
        p.zeros("enc/fc/b", (cfg.enc_fc,))
        # Small head gains keep the initial pose near identity and sigma near
        # one; directions stay orthogonal.
        p.orthogonal("enc/rot/w", (6, cfg.enc_fc), gain=0.1)
        p.zeros("enc/rot/b", (6,))
        p.orthogonal("enc/trans/w", (3, cfg.enc_fc), gain=0.1)
        p.zeros("enc/trans/b", (3,))
        p.orthogonal("enc/mu/w", (cfg.latent, cfg.enc_fc))
        p.zeros("enc/mu/b", (cfg.latent,))
        p.orthogonal("enc/logsig/w", (cfg.latent, cfg.enc_fc), gain=0.1)
        p.zeros("enc/logsig/b", (cfg.latent,))

        p.orthogonal("mesh/fc0/w", (cfg.mesh_hidden, cfg.latent))
        p.zeros("mesh/fc0/b", (cfg.mesh_hidden,))
        p.orthogonal("mesh/fc1/w", (cfg.mesh_hidden, cfg.mesh_hidden))
        p.zeros("mesh/fc1/b", (cfg.mesh_hidden,))
        # Zero final layer: the step-0 avatar is the undeformed template.
        p.zeros("mesh/fc2/w", (3 * cfg.n_mesh, cfg.mesh_hidden))
        p.zeros("mesh/fc2/b", (3 * cfg.n_mesh,))

        xw = cfg.xform_width
        p.orthogonal("xform/seed/w", (xw * rows * cols, cfg.latent))
        p.zeros("xform/seed/b", (xw * rows * cols,))
        p.orthogonal("xform/conv0/w", (xw, xw, 3, 3))
        p.zeros("xform/conv0/b", (xw,))
        # Zero final layer: step-0 corrections are the identity.
        p.zeros("xform/out/w", (9, xw, 3, 3))
        p.zeros("xform/out/b", (9,))

        oc = cfg.stage_channels(cfg.opacity_width)
        p.orthogonal("opac/seed/w", (oc[0] * rows * cols, cfg.latent))
        p.zeros("opac/seed/b", (oc[0] * rows * cols,))
        ochain = oc + [cfg.m]
        for i in range(cfg.n_stages):
            p.orthogonal(f"opac/up{i}/w", (ochain[i], ochain[i + 1], 4, 4))
            p.zeros(f"opac/up{i}/b", (ochain[i + 1],))

        ac = cfg.stage_channels(cfg.app_width)
        if cfg.appearance_mode == "concat":
            # Ablation branch: the light vector is just another network input,
            # mixed through biased, activated layers like everything else.
            achain = ac + [cfg.m]
            p.orthogonal("app/cat/seed/w",
                         (ac[0] * rows * cols, cfg.latent + 3 + cfg.n_lights))
            p.zeros("app/cat/seed/b", (ac[0] * rows * cols,))
            for i in range(cfg.n_stages):
                p.orthogonal(f"app/cat/up{i}/w", (achain[i], achain[i + 1], 4, 4))
                p.zeros(f"app/cat/up{i}/b", (achain[i + 1],))
            return
        p.orthogonal("app/nlin/seed/w", (ac[0] * rows * cols, cfg.latent + 3))
        p.zeros("app/nlin/seed/b", (ac[0] * rows * cols,))
        for i in range(cfg.n_stages - 1):
            p.orthogonal(f"app/nlin/up{i}/w", (ac[i], ac[i + 1], 4, 4))
            p.zeros(f"app/nlin/up{i}/b", (ac[i + 1],))
        # The light pathway: no bias parameters exist at all on this branch.
        lchain = ac + [cfg.m]
        p.orthogonal("app/lin/fc/w", (ac[0] * rows * cols, cfg.n_lights))
        for i in range(cfg.n_stages):
            p.orthogonal(f"app/lin/up{i}/w", (lchain[i], lchain[i + 1], 4, 4))

    # -- helpers -----------------------------------------------------------

    def _lift(self, x, shape, what: str) -> dc.Tensor:
        if isinstance(x, dc.Tensor):
            if x.dtype != self.dtype:
                raise ValueError(f"{what}: dtype {x.dtype} does not match "
                                 f"network dtype {self.dtype}")
            t = x
        else:
            t = dc.Tensor(np.asarray(x, dtype=self.dtype))
        if t.shape != shape:
            raise ValueError(f"{what}: expected shape {shape}, got {t.shape}")
        return t

    def _z_row(self, z_e) -> dc.Tensor:
        z = self._lift(z_e, (self.config.latent,), "expression code")
        return ops.reshape(z, (1, self.config.latent))

    def _slab_to_grids(self, slab) -> dc.Tensor:
        """(1, m, rows*m, cols*m) slab -> (P, m^3) flat grids."""
        cfg = self.config
        rows, cols = cfg.grid_shape
        m = cfg.m
        x = ops.reshape(slab, (m, rows, m, cols, m))
        x = ops.transpose(x, (1, 3, 0, 2, 4))
        return ops.reshape(x, (rows * cols, m ** 3))

    # -- encoder -----------------------------------------------------------

    def encode(self, views, seed=None):
        """Three normalized grayscale views -> (EncoderOutput, z_e).

        seed=None is the inference path (z_e = mu); an integer seed draws the
        reparameterization noise from a counter-based generator, so equal
        seeds reproduce z_e exactly.
        """
        cfg = self.config
        s = cfg.image_size
        if not isinstance(views, dc.Tensor):
            arr = np.asarray(views, dtype=self.dtype)
            if arr.ndim != 3 or arr.shape[0] != 3:
                raise ValueError(f"encode: expected 3 views stacked (3,{s},{s}), "
                                 f"got {arr.shape}")
            views = dc.Tensor(arr)
        x = self._lift(views, (3, s, s), "encoder views")
        h = ops.reshape(x, (1, 3, s, s))
        p = self.params
        for i in range(cfg.n_downs):
            h = ops.leaky_relu(ops.conv2d(h, p[f"enc/conv{i}/w"],
                                          p[f"enc/conv{i}/b"], stride=2, pad=1))
        flat = ops.reshape(h, (1, cfg.enc_channels()[-1] * 16))
        f = ops.leaky_relu(ops.fc(flat, p["enc/fc/w"], p["enc/fc/b"]))

        r6 = ops.reshape(ops.fc(f, p["enc/rot/w"], p["enc/rot/b"]), (6,))
        rotation = rotation_from_6d(r6)
        translation = ops.reshape(ops.fc(f, p["enc/trans/w"], p["enc/trans/b"]), (3,))
        mu = ops.reshape(ops.fc(f, p["enc/mu/w"], p["enc/mu/b"]), (cfg.latent,))
        sigma = ops.exp(ops.reshape(ops.fc(f, p["enc/logsig/w"], p["enc/logsig/b"]),
                                    (cfg.latent,)))
        if seed is None:
            z = mu
        else:
            gen = np.random.Generator(np.random.Philox(key=int(seed)))
            eps = gen.standard_normal(cfg.latent).astype(self.dtype)
            z = ops.add(mu, ops.mul(sigma, dc.Tensor(eps)))
        return EncoderOutput(rotation, translation, mu, sigma), z

    # -- decoders ----------------------------------------------------------

    def decode_mesh(self, z_e) -> dc.Tensor:
        """Expression code -> (n_mesh, 3) vertex residuals."""
        p = self.params
        h = ops.leaky_relu(ops.fc(self._z_row(z_e), p["mesh/fc0/w"], p["mesh/fc0/b"]))
        h = ops.leaky_relu(ops.fc(h, p["mesh/fc1/w"], p["mesh/fc1/b"]))
        out = ops.fc(h, p["mesh/fc2/w"], p["mesh/fc2/b"])
        return ops.reshape(out, (self.config.n_mesh, 3))

    def decode_transform(self, z_e) -> PrimitiveCorrections:
        """Expression code -> per-primitive corrective transforms.

        The 9 head channels split as axis-angle rotation, translation, and
        log-scale; a zero head output is exactly the identity correction.
        """
        cfg = self.config
        p = self.params
        rows, cols = cfg.grid_shape
        h = ops.leaky_relu(ops.fc(self._z_row(z_e), p["xform/seed/w"],
                                  p["xform/seed/b"]))
        h = ops.reshape(h, (1, cfg.xform_width, rows, cols))
        h = ops.leaky_relu(ops.conv2d(h, p["xform/conv0/w"], p["xform/conv0/b"], pad=1))
        raw_img = ops.conv2d(h, p["xform/out/w"], p["xform/out/b"], pad=1)
        raw = ops.transpose(ops.reshape(raw_img, (9, cfg.n_prim)), (1, 0))
        omega = ops.narrow(raw, 1, 0, 3)
        translation = ops.narrow(raw, 1, 3, 3)
        log_scale = ops.narrow(raw, 1, 6, 3)
        return PrimitiveCorrections(rotation=rotation_from_axis_angle(omega),
                                    translation=translation,
                                    scale=ops.exp(log_scale),
                                    raw=raw)

    def decode_opacity(self, z_e) -> dc.Tensor:
        """Expression code -> (P, m^3) non-negative opacity grids."""
        cfg = self.config
        p = self.params
        rows, cols = cfg.grid_shape
        oc = cfg.stage_channels(cfg.opacity_width)
        h = ops.leaky_relu(ops.fc(self._z_row(z_e), p["opac/seed/w"],
                                  p["opac/seed/b"]))
        h = ops.reshape(h, (1, oc[0], rows, cols))
        for i in range(cfg.n_stages):
            h = ops.conv_transpose2d(h, p[f"opac/up{i}/w"], p[f"opac/up{i}/b"],
                                     stride=2, pad=1)
            h = ops.leaky_relu(h) if i < cfg.n_stages - 1 else ops.softplus(h)
        return self._slab_to_grids(ops.scale(h, cfg.alpha_gain))

    def _appearance_features(self, z_e, view_dir) -> list:
        """Nonlinear-branch feature maps, one per linear-branch stage."""
        cfg = self.config
        p = self.params
        rows, cols = cfg.grid_shape
        d = self._lift(view_dir, (3,), "view direction")
        n = float(np.linalg.norm(d.data))
        if abs(n - 1.0) > 1e-3:
            raise ValueError(f"view direction must be unit length, |d| = {n:.6f}")
        ac = cfg.stage_channels(cfg.app_width)
        x = ops.reshape(ops.concat([self._lift(z_e, (cfg.latent,), "expression code"),
                                    d], axis=0), (1, cfg.latent + 3))
        f = ops.leaky_relu(ops.fc(x, p["app/nlin/seed/w"], p["app/nlin/seed/b"]))
        f = ops.reshape(f, (1, ac[0], rows, cols))
        feats = [f]
        for i in range(cfg.n_stages - 1):
            f = ops.leaky_relu(ops.conv_transpose2d(f, p[f"app/nlin/up{i}/w"],
                                                    p[f"app/nlin/up{i}/b"],
                                                    stride=2, pad=1))
            feats.append(f)
        return feats

    def _appearance_linear(self, light, feats, domain_check: bool) -> dc.Tensor:
        cfg = self.config
        p = self.params
        l = self._lift(light, (cfg.n_lights,), "light vector")
        if domain_check and (l.data < 0).any():
            raise ValueError("light intensities must be non-negative")
        f = ops.fc(ops.reshape(l, (1, cfg.n_lights)), p["app/lin/fc/w"])
        rows, cols = cfg.grid_shape
        f = ops.reshape(f, (1, cfg.stage_channels(cfg.app_width)[0], rows, cols))
        for i in range(cfg.n_stages):
            f = ops.mul(f, ops.add(feats[i], 1.0))
            f = ops.conv_transpose2d(f, p[f"app/lin/up{i}/w"], stride=2, pad=1)
        return self._slab_to_grids(f)

    def _appearance_concat(self, z_e, light, view_dir, domain_check: bool) -> dc.Tensor:
        cfg = self.config
        p = self.params
        rows, cols = cfg.grid_shape
        d = self._lift(view_dir, (3,), "view direction")
        n = float(np.linalg.norm(d.data))
        if abs(n - 1.0) > 1e-3:
            raise ValueError(f"view direction must be unit length, |d| = {n:.6f}")
        l = self._lift(light, (cfg.n_lights,), "light vector")
        if domain_check and (l.data < 0).any():
            raise ValueError("light intensities must be non-negative")
        x = ops.concat([self._lift(z_e, (cfg.latent,), "expression code"), d, l], axis=0)
        x = ops.reshape(x, (1, cfg.latent + 3 + cfg.n_lights))
        f = ops.leaky_relu(ops.fc(x, p["app/cat/seed/w"], p["app/cat/seed/b"]))
        f = ops.reshape(f, (1, cfg.stage_channels(cfg.app_width)[0], rows, cols))
        for i in range(cfg.n_stages):
            f = ops.conv_transpose2d(f, p[f"app/cat/up{i}/w"], p[f"app/cat/up{i}/b"],
                                     stride=2, pad=1)
            if i < cfg.n_stages - 1:
                f = ops.leaky_relu(f)
        return self._slab_to_grids(f)

    def decode_appearance(self, z_e, light, view_dir, domain_check: bool = True) -> dc.Tensor:
        """One light channel -> (P, m^3) radiance grids, exactly linear in light.

        domain_check rejects negative intensities (physical input domain);
        superposition tests disable it to probe the algebra over all reals.
        In concat mode the light is an ordinary input and no linearity holds.
        """
        if self.config.appearance_mode == "concat":
            return self._appearance_concat(z_e, light, view_dir, domain_check)
        feats = self._appearance_features(z_e, view_dir)
        return self._appearance_linear(light, feats, domain_check)

    def decode_appearance_rgb(self, z_e, lights, view_dir,
                              domain_check: bool = True) -> dc.Tensor:
        """(3, n_lights) per-channel light vectors -> (P, 3, m^3) grids.

        One nonlinear forward shared by three linear passes.
        """
        cfg = self.config
        lt = self._lift(lights, (3, cfg.n_lights), "light vectors")
        feats = None
        if cfg.appearance_mode == "linear":
            feats = self._appearance_features(z_e, view_dir)
        chans = []
        for c in range(3):
            row = ops.reshape(ops.narrow(lt, 0, c, 1), (cfg.n_lights,))
            if feats is None:
                grid = self._appearance_concat(z_e, row, view_dir, domain_check)
            else:
                grid = self._appearance_linear(row, feats, domain_check)
            chans.append(ops.reshape(grid, (cfg.n_prim, 1, cfg.m ** 3)))
        return ops.concat(chans, axis=1)
