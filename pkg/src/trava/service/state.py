"""Per-connection session state and the JSON message that mutates it.

A state message carries only the fields the client wants to change; the
rest of the session persists. Every validation failure is a ValueError
whose text goes back over the socket, so the messages stay stable.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

_STATE_KEYS = {"type", "z", "blend", "light", "camera", "exposure"}
_LIGHT_KEYS = {"env", "gain", "vector"}
_CAMERA_KEYS = {"az", "el", "dist"}


@dataclasses.dataclass
class SessionState:
    z: np.ndarray                   # (latent,) drives the decoder heads
    blend: np.ndarray | None        # (n_shapes,) geometry override, None = decoded mesh
    light: np.ndarray               # (3, n_lights) per-channel intensities
    az: float = 0.0
    el: float = 0.0
    dist: float = 0.5
    exposure: float = 1.0


def _floats(value, n: int, name: str) -> np.ndarray:
    if not isinstance(value, (list, tuple)):
        raise ValueError(f"{name} must be a list of numbers")
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape != (n,):
        raise ValueError(f"{name} must have {n} entries, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} entries must be finite")
    return arr.astype(np.float32)


def _scalar(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{name} must be a number")
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite")
    return float(value)


def _parse_light(light, engine) -> np.ndarray:
    if not isinstance(light, dict):
        raise ValueError("light must be an object")
    unknown = set(light) - _LIGHT_KEYS
    if unknown:
        raise ValueError(f"unknown light field {sorted(unknown)[0]!r}")
    if "vector" in light and "env" in light:
        raise ValueError("light takes env or vector, not both")
    if "vector" in light:
        if "gain" in light:
            raise ValueError("light gain applies to env mode only")
        vec = _floats(light["vector"], engine.n_lights, "light vector")
        if (vec < 0).any():
            raise ValueError("light values must be non-negative")
        return np.repeat(vec[None, :], 3, axis=0)
    if "env" in light:
        base = engine.env_vector(light["env"])
        gain = _scalar(light.get("gain", 1.0), "light gain")
        if gain < 0:
            raise ValueError("light gain must be non-negative")
        return (base * gain).astype(np.float32)
    raise ValueError("light needs a vector or an env id")


def apply_message(state: SessionState, msg, engine) -> SessionState:
    """Fold one client message into the session; returns the new state."""
    if not isinstance(msg, dict) or msg.get("type") != "state":
        raise ValueError("unknown message type (expected type='state')")
    unknown = set(msg) - _STATE_KEYS
    if unknown:
        raise ValueError(f"unknown state field {sorted(unknown)[0]!r}")
    if "z" in msg and "blend" in msg:
        raise ValueError("z and blend are mutually exclusive")
    fields: dict = {}
    if "z" in msg:
        fields["z"] = _floats(msg["z"], engine.latent_dim, "z")
        fields["blend"] = None
    if "blend" in msg:
        fields["blend"] = _floats(msg["blend"], engine.n_blend, "blend")
    if "light" in msg:
        fields["light"] = _parse_light(msg["light"], engine)
    if "camera" in msg:
        cam = msg["camera"]
        if not isinstance(cam, dict):
            raise ValueError("camera must be an object")
        unknown = set(cam) - _CAMERA_KEYS
        if unknown:
            raise ValueError(f"unknown camera field {sorted(unknown)[0]!r}")
        if "az" in cam:
            fields["az"] = _scalar(cam["az"], "camera az")
        if "el" in cam:
            fields["el"] = _scalar(cam["el"], "camera el")
        if "dist" in cam:
            dist = _scalar(cam["dist"], "camera dist")
            if dist <= 0:
                raise ValueError("camera distance must be positive")
            fields["dist"] = dist
    if "exposure" in msg:
        exposure = _scalar(msg["exposure"], "exposure")
        if exposure < 0:
            raise ValueError("exposure must be non-negative")
        fields["exposure"] = exposure
    return dataclasses.replace(state, **fields)
