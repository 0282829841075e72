"""Named parameter registry with seeded, reproducible initialization.

Every network weight is created through one ParameterStore so checkpoints
are a flat name -> array mapping and two stores built with the same seed and
creation order hold bit-identical values.
"""

from __future__ import annotations

import numpy as np

from trava import diffcore as dc


def orthogonal_init(rng: np.random.Generator, shape, gain: float = 1.0) -> np.ndarray:
    """Semi-orthogonal init over (shape[0], prod(shape[1:])), QR-based."""
    rows = int(shape[0])
    cols = int(np.prod(shape[1:])) if len(shape) > 1 else 1
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    # Sign-fix the diagonal so the factorization (hence the init) is unique.
    q = q * np.sign(np.diagonal(r))
    if rows < cols:
        q = q.T
    return (gain * q[:rows, :cols]).reshape(shape)


class ParameterStore:
    """Insertion-ordered name -> Tensor map feeding the optimizer and checkpoints."""

    def __init__(self, seed: int = 0, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ValueError(f"parameters must be float32/float64, got {self.dtype}")
        self._rng = np.random.default_rng(seed)
        self._params: dict[str, dc.Tensor] = {}

    def _register(self, name: str, arr: np.ndarray) -> dc.Tensor:
        if name in self._params:
            raise ValueError(f"parameter {name!r} already exists")
        t = dc.Tensor(np.ascontiguousarray(arr, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def orthogonal(self, name: str, shape, gain: float = 1.0) -> dc.Tensor:
        return self._register(name, orthogonal_init(self._rng, shape, gain))

    def zeros(self, name: str, shape) -> dc.Tensor:
        return self._register(name, np.zeros(shape))

    def __getitem__(self, name: str) -> dc.Tensor:
        return self._params[name]

    def __contains__(self, name) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list:
        return list(self._params)

    def tensors(self) -> dict:
        return dict(self._params)

    def n_values(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def state_dict(self) -> dict:
        return {k: p.data.copy() for k, p in self._params.items()}

    def load_state_dict(self, state: dict) -> None:
        """Restore values in place; the name set and shapes must match exactly."""
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise ValueError(f"parameter names mismatch: missing={sorted(missing)} "
                             f"unexpected={sorted(extra)}")
        for k, p in self._params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.data.shape:
                raise ValueError(f"parameter {k!r}: shape {arr.shape} != {p.data.shape}")
            p.data = np.ascontiguousarray(arr, dtype=self.dtype)
