"""Image and regularization loss stacks.

The image loss compares clipped renders against clipped targets: MAE plus a
perceptual distance under a fixed random conv pyramid, plus an optional
non-saturating adversarial term. The regularizer bundles the expression-aware
Laplacian, the weighted norm of per-primitive pose corrections, the volume
prior (product of world scales), and the encoder KL divergence.
"""

from __future__ import annotations

import numpy as np

from trava import diffcore as dc
from trava.diffcore import ops
from trava.geometry import laplacian_loss

from .config import LossWeights


class PerceptualExtractor:
    """Fixed, seeded 3-stage conv pyramid; weights never train.

    A frozen random projection preserves the metric character of a
    perceptual loss (patch correlations at three scales) without hauling in
    a pretrained network.
    """

    def __init__(self, channels: int = 3, width: int = 8, seed: int = 17):
        rng = np.random.Generator(np.random.Philox(seed))
        chain = [channels] + [width << i for i in range(3)]
        self.channels = channels
        self._kernels = [
            rng.standard_normal((chain[i + 1], chain[i], 4, 4))
            * np.sqrt(2.0 / (chain[i] * 16))
            for i in range(3)
        ]
        self._cache = {}

    def _tensors(self, dtype):
        key = np.dtype(dtype).name
        if key not in self._cache:
            self._cache[key] = [dc.Tensor(k.astype(dtype)) for k in self._kernels]
        return self._cache[key]

    def features(self, img) -> list:
        """(H, W, C) image -> one feature map per pyramid stage."""
        x = dc.as_tensor(img)
        h, w, c = x.shape
        if c != self.channels:
            raise ValueError(f"extractor built for {self.channels} channels, "
                             f"image has {c}")
        x = ops.reshape(ops.transpose(x, (2, 0, 1)), (1, c, h, w))
        feats = []
        for k in self._tensors(x.dtype):
            x = ops.leaky_relu(ops.conv2d(x, k, stride=2, pad=1))
            feats.append(x)
        return feats


class PatchDiscriminator:
    """Two strided convs and a 1x1 logit head over local patches."""

    def __init__(self, channels: int = 3, width: int = 16, seed: int = 5,
                 dtype=np.float32):
        from trava.avatarnet.params import ParameterStore

        ps = ParameterStore(seed=seed, dtype=dtype)
        self.channels = channels
        ps.orthogonal("d/conv0/w", (width, channels, 4, 4))
        ps.zeros("d/conv0/b", (width,))
        ps.orthogonal("d/conv1/w", (2 * width, width, 4, 4))
        ps.zeros("d/conv1/b", (2 * width,))
        ps.orthogonal("d/head/w", (1, 2 * width, 1, 1))
        ps.zeros("d/head/b", (1,))
        self.params = ps

    def __call__(self, img) -> dc.Tensor:
        x = dc.as_tensor(img)
        h, w, c = x.shape
        if c != self.channels:
            raise ValueError(f"discriminator built for {self.channels} "
                             f"channels, image has {c}")
        p = self.params
        x = ops.reshape(ops.transpose(x, (2, 0, 1)), (1, c, h, w))
        x = ops.leaky_relu(ops.conv2d(x, p["d/conv0/w"], p["d/conv0/b"],
                                      stride=2, pad=1))
        x = ops.leaky_relu(ops.conv2d(x, p["d/conv1/w"], p["d/conv1/b"],
                                      stride=2, pad=1))
        return ops.conv2d(x, p["d/head/w"], p["d/head/b"])

    def loss(self, real, fake) -> dc.Tensor:
        """Discriminator-side objective; callers detach fake beforehand."""
        return ops.add(ops.reduce_mean(ops.softplus(ops.scale(self(real), -1.0))),
                       ops.reduce_mean(ops.softplus(self(fake))))


def loss_image(pred, target, weights: LossWeights,
               extractor: PerceptualExtractor | None = None,
               discriminator: PatchDiscriminator | None = None):
    """Clipped-image loss -> (total Tensor, component floats).

    Both sides clamp to [0, 1] first; saturated pixels get zero gradient.
    The adversarial term participates only when its weight is positive and
    a discriminator is supplied.
    """
    pred = dc.as_tensor(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: render {pred.shape} "
                         f"vs target {target.shape}")
    pred_c = ops.clamp(pred, 0.0, 1.0)
    target_c = dc.Tensor(np.clip(target, 0.0, 1.0).astype(pred.dtype))

    total = ops.reduce_mean(ops.absolute(ops.sub(pred_c, target_c)))
    components = {"l1": total.item(), "vgg": 0.0, "gan": 0.0}

    if weights.vgg > 0:
        if extractor is None:
            raise ValueError("lambda_vgg > 0 needs a perceptual extractor")
        fp = extractor.features(pred_c)
        ft = extractor.features(target_c)
        stages = [ops.reduce_mean(ops.mul(d, d))
                  for d in (ops.sub(a, b) for a, b in zip(fp, ft))]
        vgg = stages[0]
        for s in stages[1:]:
            vgg = ops.add(vgg, s)
        vgg = ops.scale(vgg, 1.0 / len(stages))
        components["vgg"] = vgg.item()
        total = ops.add(total, ops.scale(vgg, weights.vgg))

    if weights.gan > 0 and discriminator is not None:
        logits = discriminator(pred_c)
        gan = ops.reduce_mean(ops.softplus(ops.scale(logits, -1.0)))
        components["gan"] = gan.item()
        total = ops.add(total, ops.scale(gan, weights.gan))

    return total, components


def _masked_norm(x, row_weights) -> dc.Tensor:
    """Frobenius norm of diag(w) @ x, smoothed so the gradient at the exact
    zero (identity corrections) is zero instead of undefined; the smoothing
    offsets the value by < eps and vanishes at zero."""
    w = dc.Tensor(np.asarray(row_weights, dtype=x.dtype)[:, None])
    wx = ops.mul(x, w)
    n2 = ops.reduce_sum(ops.mul(wx, wx))
    eps = 1e-6 if x.dtype == np.float32 else 1e-12
    return ops.add(ops.sqrt(ops.add(n2, eps * eps)), -eps)


def loss_reg(corrections, scales, mu, sigma, vertices, basis, lap,
             vertex_weights, prim_weights, weights: LossWeights):
    """Regularizer -> (total Tensor, component floats).

    lap: weighted Laplacian energy of the decoded vertices against their
    projection onto the blendshape span. p_r: weighted norm of the raw
    (axis-angle, translation) head per primitive, averaged. vol: mean
    product of world scales. kld: KL(q(z) || N(0, I)).
    """
    n_prim = scales.shape[0]

    v_base = basis.project(vertices)
    lap_term = laplacian_loss(vertices, v_base, lap, vertex_weights)

    pr_term = ops.scale(_masked_norm(ops.narrow(corrections.raw, 1, 0, 6),
                                     prim_weights), 1.0 / n_prim)

    sx = ops.narrow(scales, 1, 0, 1)
    sy = ops.narrow(scales, 1, 1, 1)
    sz = ops.narrow(scales, 1, 2, 1)
    vol_term = ops.scale(ops.reduce_sum(ops.mul(ops.mul(sx, sy), sz)),
                         1.0 / n_prim)

    inner = ops.sub(ops.sub(ops.add(ops.scale(ops.log(sigma), 2.0), 1.0),
                            ops.mul(mu, mu)),
                    ops.mul(sigma, sigma))
    kld_term = ops.scale(ops.reduce_sum(inner), -0.5)

    components = {"lap": lap_term.item(), "p_r": pr_term.item(),
                  "vol": vol_term.item(), "kld": kld_term.item()}
    total = ops.scale(lap_term, weights.lap)
    total = ops.add(total, ops.scale(pr_term, weights.p_r))
    total = ops.add(total, ops.scale(vol_term, weights.vol))
    total = ops.add(total, ops.scale(kld_term, weights.kld))
    return total, components
