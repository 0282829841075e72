"""Blendshape-weight playback: a small MLP driving the expression code."""

from __future__ import annotations

import numpy as np

from trava import diffcore as dc
from trava.diffcore import ops

from .params import ParameterStore


class BlendshapeRegressor:
    """Predicts expression codes from rig weights after fitting.

    Three fully-connected layers with LeakyReLU between; fit() runs
    full-batch Adam on squared error. predict() refuses to run before a fit
    so playback never sees garbage codes.
    """

    def __init__(self, latent: int, n_weights: int = 51, hidden: int = 128,
                 dtype=np.float32, seed: int = 0):
        self.latent = int(latent)
        self.n_weights = int(n_weights)
        self.params = ParameterStore(seed=seed, dtype=dtype)
        p = self.params
        p.orthogonal("drv/fc0/w", (hidden, self.n_weights))
        p.zeros("drv/fc0/b", (hidden,))
        p.orthogonal("drv/fc1/w", (hidden, hidden))
        p.zeros("drv/fc1/b", (hidden,))
        p.orthogonal("drv/fc2/w", (self.latent, hidden))
        p.zeros("drv/fc2/b", (self.latent,))
        self.fitted = False
        self.final_loss = None

    def _forward(self, x: dc.Tensor) -> dc.Tensor:
        p = self.params
        h = ops.leaky_relu(ops.fc(x, p["drv/fc0/w"], p["drv/fc0/b"]))
        h = ops.leaky_relu(ops.fc(h, p["drv/fc1/w"], p["drv/fc1/b"]))
        return ops.fc(h, p["drv/fc2/w"], p["drv/fc2/b"])

    def fit(self, weights, codes, steps: int = 800, lr: float = 3e-3) -> float:
        """Regress codes (N, latent) from weights (N, n_weights); returns the
        final mean squared error."""
        w = np.asarray(weights, dtype=self.params.dtype)
        z = np.asarray(codes, dtype=self.params.dtype)
        if w.ndim != 2 or w.shape[1] != self.n_weights:
            raise ValueError(f"weights must be (N, {self.n_weights}), got {w.shape}")
        if z.shape != (w.shape[0], self.latent):
            raise ValueError(f"codes must be ({w.shape[0]}, {self.latent}), got {z.shape}")
        x = dc.Tensor(w)
        target = dc.Tensor(z)
        opt = dc.Adam(self.params.tensors(), lr=lr)
        loss_value = float("inf")
        for _ in range(int(steps)):
            opt.zero_grad()
            err = ops.sub(self._forward(x), target)
            loss = ops.reduce_mean(ops.mul(err, err))
            dc.backward(loss)
            opt.step()
            loss_value = loss.item()
        self.fitted = True
        self.final_loss = loss_value
        return loss_value

    def predict(self, weights) -> dc.Tensor:
        """One weight vector -> (latent,) expression code; deterministic."""
        if not self.fitted:
            raise RuntimeError("regressor is not fitted; call fit() first")
        w = np.asarray(weights, dtype=self.params.dtype)
        if w.shape != (self.n_weights,):
            raise ValueError(f"weights must be ({self.n_weights},), got {w.shape}")
        with dc.no_grad():
            out = self._forward(dc.Tensor(w.reshape(1, -1)))
        return ops.reshape(out, (self.latent,))
