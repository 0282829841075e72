"""Checkpoint files: model parameters, optimizer moments, run metadata.

A checkpoint is a tensor container with namespaced entries: `param/<name>`
for network parameters, `adam/<key>` for optimizer state, `extra/<name>`
for anything the trainer wants carried along (base vertices, alignment).
Architecture fields ride in metadata as `arch/<field>` so a checkpoint is
self-describing: load_checkpoint rebuilds the network without a config.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .avatarnet import AvatarConfig, AvatarNet
from .container import load_container, save_container

_ARCH_INTS = ("n_prim", "m", "latent", "image_size", "n_lights", "n_mesh",
              "enc_width", "enc_fc", "mesh_hidden", "xform_width",
              "opacity_width", "app_width")


@dataclasses.dataclass
class Checkpoint:
    net: AvatarNet
    metadata: dict
    adam_state: dict
    extras: dict

    @property
    def step(self) -> int:
        return int(self.metadata.get("step", "0"))


def save_checkpoint(path, net: AvatarNet, optimizer=None, extras=None,
                    metadata=None) -> None:
    tensors = {f"param/{k}": v for k, v in net.params.state_dict().items()}
    if optimizer is not None:
        for k, v in optimizer.state_dict().items():
            tensors[f"adam/{k}"] = v
    for k, v in (extras or {}).items():
        tensors[f"extra/{k}"] = np.asarray(v)
    meta = {str(k): str(v) for k, v in (metadata or {}).items()}
    cfg = net.config
    for f in _ARCH_INTS:
        meta[f"arch/{f}"] = str(getattr(cfg, f))
    meta["arch/alpha_gain"] = repr(cfg.alpha_gain)
    meta["arch/appearance_mode"] = cfg.appearance_mode
    meta["arch/dtype"] = np.dtype(net.dtype).name
    save_container(path, tensors, meta)


def load_checkpoint(path) -> Checkpoint:
    tensors, meta = load_container(path)
    kwargs = {f: int(meta[f"arch/{f}"]) for f in _ARCH_INTS}
    cfg = AvatarConfig(alpha_gain=float(meta["arch/alpha_gain"]),
                       appearance_mode=meta["arch/appearance_mode"], **kwargs)
    net = AvatarNet(cfg, dtype=np.dtype(meta["arch/dtype"]).type, seed=0)
    params = {}
    adam_state = {}
    extras = {}
    for name, arr in tensors.items():
        kind, _, rest = name.partition("/")
        if kind == "param":
            params[rest] = arr
        elif kind == "adam":
            adam_state[rest] = arr
        elif kind == "extra":
            extras[rest] = arr
        else:
            raise ValueError(f"{path}: unexpected checkpoint entry {name!r}")
    net.params.load_state_dict(params)
    return Checkpoint(net=net, metadata=meta, adam_state=adam_state,
                      extras=extras)
