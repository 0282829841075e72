"""Run configuration: loss weights and the flat key = value file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field


@dataclass
class LossWeights:
    """Balancing weights; defaults are the published training values."""

    vgg: float = 0.1
    gan: float = 0.005
    lap: float = 0.01
    p_r: float = 10.0
    vol: float = 0.01
    kld: float = 0.001

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"loss weight {f.name} must be non-negative")


@dataclass
class TrainConfig:
    dataset_dir: str = ""
    out_dir: str = ""
    lr: float = 1e-4
    steps: int = 1000
    seed: int = 0
    checkpoint_every: int = 250
    n_prim: int = 256
    grid_m: int = 8
    latent_dim: int = 64
    enc_width: int = 16
    enc_fc: int = 256
    mesh_hidden: int = 256
    xform_width: int = 64
    opacity_width: int = 64
    app_width: int = 32
    appearance_mode: str = "linear"
    alpha_gain: float = 20.0
    jitter: bool = True
    # Smoke profiles turn sampling off for deterministic descent checks.
    sample_latent: bool = True
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be positive")


# file key -> (target dataclass, field, parser)
def _bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


_KEYS = {
    "dataset_dir": ("cfg", "dataset_dir", str),
    "out_dir": ("cfg", "out_dir", str),
    "lr": ("cfg", "lr", float),
    "steps": ("cfg", "steps", int),
    "seed": ("cfg", "seed", int),
    "checkpoint_every": ("cfg", "checkpoint_every", int),
    "n_prim": ("cfg", "n_prim", int),
    "grid_m": ("cfg", "grid_m", int),
    "latent_dim": ("cfg", "latent_dim", int),
    "enc_width": ("cfg", "enc_width", int),
    "enc_fc": ("cfg", "enc_fc", int),
    "mesh_hidden": ("cfg", "mesh_hidden", int),
    "xform_width": ("cfg", "xform_width", int),
    "opacity_width": ("cfg", "opacity_width", int),
    "app_width": ("cfg", "app_width", int),
    "appearance_mode": ("cfg", "appearance_mode", str),
    "alpha_gain": ("cfg", "alpha_gain", float),
    "jitter": ("cfg", "jitter", _bool),
    "sample_latent": ("cfg", "sample_latent", _bool),
    "lambda_vgg": ("w", "vgg", float),
    "lambda_gan": ("w", "gan", float),
    "lambda_lap": ("w", "lap", float),
    "lambda_pr": ("w", "p_r", float),
    "lambda_vol": ("w", "vol", float),
    "lambda_kld": ("w", "kld", float),
}


def parse_config(text: str) -> TrainConfig:
    """Flat "key = value" lines; # comments; unknown or repeated keys fail."""
    cfg_kv = {}
    w_kv = {}
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEYS:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        if key in seen:
            raise ValueError(f"line {lineno}: duplicate config key {key!r}")
        seen.add(key)
        target, fname, conv = _KEYS[key]
        try:
            parsed = conv(value)
        except ValueError as e:
            raise ValueError(f"line {lineno}: bad value for {key}: {e}") from None
        (cfg_kv if target == "cfg" else w_kv)[fname] = parsed
    return TrainConfig(weights=LossWeights(**w_kv), **cfg_kv)


def load_config(path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def config_items(config: TrainConfig) -> dict:
    """The flat key -> string-value view, save_config's inverse of parse."""
    out = {}
    for key, (target, fname, _) in _KEYS.items():
        obj = config if target == "cfg" else config.weights
        value = getattr(obj, fname)
        out[key] = repr(value) if isinstance(value, float) else str(value)
    return out


def save_config(path, config: TrainConfig) -> None:
    items = config_items(config)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for key in _KEYS:
            f.write(f"{key} = {items[key]}\n")
