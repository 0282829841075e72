"""Adam optimizer over named parameter dicts."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Adam:
    """Standard bias-corrected Adam.

    Keeps per-parameter first/second moment buffers keyed by parameter name so
    the full optimizer state can be checkpointed and restored exactly.
    """

    def __init__(self, params: dict, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        for name, p in params.items():
            if not isinstance(p, Tensor) or not p.requires_grad:
                raise TypeError(f"parameter {name!r} must be a Tensor with requires_grad")
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        # Moments in float64 regardless of parameter dtype: the update math
        # stays stable and checkpoints restore bit-exactly.
        self.m = {k: np.zeros(p.data.shape, dtype=np.float64) for k, p in self.params.items()}
        self.v = {k: np.zeros(p.data.shape, dtype=np.float64) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name in sorted(self.params):
            p = self.params[name]
            if p.grad is None:
                continue
            g = p.grad.astype(np.float64, copy=False)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            p.data = (p.data.astype(np.float64) - update).astype(p.data.dtype)

    def state_dict(self) -> dict:
        out = {"step_count": np.asarray([self.step_count], dtype=np.int64)}
        for k in self.params:
            out[f"m/{k}"] = self.m[k].copy()
            out[f"v/{k}"] = self.v[k].copy()
        return out

    def load_state_dict(self, state: dict):
        self.step_count = int(np.asarray(state["step_count"]).ravel()[0])
        for k in self.params:
            self.m[k] = np.array(state[f"m/{k}"], dtype=np.float64)
            self.v[k] = np.array(state[f"v/{k}"], dtype=np.float64)
