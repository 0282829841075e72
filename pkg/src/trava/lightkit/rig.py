"""Light rig model and capture light patterns.

The rig is a set of quasi-uniform directions on the sphere (Fibonacci
placement, seed-rotated) with a max intensity per light. Patterns are
LightingCondition vectors: group patterns light a seed light plus its
angularly nearest neighbors at max and hold everything else at a low base
level; OLAT patterns are one-hot.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RIG_FORMAT_VERSION = 1


@dataclass
class LightRig:
    directions: np.ndarray  # (n_lights, 3) unit vectors, float64
    max_intensity: np.ndarray  # (n_lights,) float64

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=np.float64)
        self.max_intensity = np.asarray(self.max_intensity, dtype=np.float64)
        norms = np.linalg.norm(self.directions, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ValueError("rig directions must be unit vectors")
        # Reject duplicate directions.
        dots = self.directions @ self.directions.T
        np.fill_diagonal(dots, -1.0)
        if dots.max() >= 1.0 - 1e-12:
            raise ValueError("rig contains two identical directions")

    @property
    def n_lights(self) -> int:
        return self.directions.shape[0]


@dataclass
class LightingCondition:
    """Per-light intensities, shape (channels, n_lights), channels 1 or 3."""

    intensities: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.intensities, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[0] not in (1, 3):
            raise ValueError(f"intensities must be (1|3, n_lights), got {arr.shape}")
        if np.any(arr < 0):
            raise ValueError("lighting intensities must be non-negative")
        self.intensities = arr

    @property
    def n_lights(self) -> int:
        return self.intensities.shape[1]

    @property
    def channels(self) -> int:
        return self.intensities.shape[0]

    def mono(self) -> np.ndarray:
        """Collapse to a single channel by averaging."""
        return self.intensities.mean(axis=0)


def _seed_rotation(seed: int) -> np.ndarray:
    """Deterministic random rotation matrix from the seed."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def build_rig(n_lights: int = 356, seed: int = 0, max_intensity: float = 1.0) -> LightRig:
    """Quasi-uniform rig via Fibonacci-sphere placement, rotated by the seed."""
    if n_lights < 4:
        raise ValueError(f"build_rig: need at least 4 lights, got {n_lights}")
    i = np.arange(n_lights, dtype=np.float64)
    z = 1.0 - 2.0 * (i + 0.5) / n_lights
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    golden = np.pi * (3.0 - np.sqrt(5.0))
    phi = golden * i
    pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    pts = pts @ _seed_rotation(seed).T
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return LightRig(pts, np.full(n_lights, float(max_intensity)))


def group_pattern(rig: LightRig, seed: int, group_size: int = 7,
                  base_level: float | None = None) -> LightingCondition:
    """Seed light plus its angularly nearest neighbors at max, rest dim.

    base_level defaults to 2% of the rig's max intensity.
    """
    if not 1 <= group_size <= rig.n_lights:
        raise ValueError(f"group_size {group_size} out of range for {rig.n_lights} lights")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    center = int(rng.integers(rig.n_lights))
    dots = rig.directions @ rig.directions[center]
    # Largest dot products = smallest angles; the center itself has dot 1.
    group = np.argsort(-dots, kind="stable")[:group_size]
    base = 0.02 * rig.max_intensity if base_level is None else np.full(rig.n_lights, base_level)
    if np.any(base < 0) or np.any(base >= rig.max_intensity):
        raise ValueError("base_level must satisfy 0 <= base_level < max_intensity")
    values = base.copy()
    values[group] = rig.max_intensity[group]
    return LightingCondition(values[None, :])


def olat_pattern(rig: LightRig, light_index: int) -> LightingCondition:
    """One light at max intensity, all others off."""
    if not 0 <= light_index < rig.n_lights:
        raise ValueError(f"light index {light_index} out of range [0, {rig.n_lights})")
    values = np.zeros(rig.n_lights)
    values[light_index] = rig.max_intensity[light_index]
    return LightingCondition(values[None, :])


def full_on_pattern(rig: LightRig) -> LightingCondition:
    return LightingCondition(rig.max_intensity[None, :].copy())


def save_rig(path, rig: LightRig) -> None:
    """One line per light: "index dx dy dz max_intensity"."""
    with open(path, "w", encoding="ascii") as f:
        f.write(f"# lightrig v{RIG_FORMAT_VERSION}\n")
        for idx in range(rig.n_lights):
            d = rig.directions[idx]
            f.write(f"{idx} {d[0]:.17g} {d[1]:.17g} {d[2]:.17g} "
                    f"{rig.max_intensity[idx]:.17g}\n")


def load_rig(path) -> LightRig:
    dirs = []
    maxi = []
    with open(path, "r", encoding="ascii") as f:
        header = f.readline().strip()
        if header != f"# lightrig v{RIG_FORMAT_VERSION}":
            raise ValueError(f"unsupported rig file header: {header!r}")
        for lineno, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(f"rig file line {lineno + 2}: expected 5 fields")
            if int(parts[0]) != len(dirs):
                raise ValueError(f"rig file line {lineno + 2}: indices must be sequential")
            dirs.append([float(parts[1]), float(parts[2]), float(parts[3])])
            maxi.append(float(parts[4]))
    return LightRig(np.asarray(dirs), np.asarray(maxi))
