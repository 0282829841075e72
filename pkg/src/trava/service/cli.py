"""Command line front: synth, train, render, relight, export, serve.

Runtime failures print one `error: ...` line on standard error and exit 1;
argparse handles unknown flags with usage text and exit 2. Both prefixes
are stable for scripting.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np


def _parse_floats(spec: str, n: int, name: str) -> np.ndarray:
    """Comma-separated values, or @path to a whitespace-separated file."""
    if spec.startswith("@"):
        arr = np.loadtxt(spec[1:], dtype=np.float64).reshape(-1)
    else:
        try:
            arr = np.asarray([float(v) for v in spec.split(",")])
        except ValueError:
            raise ValueError(f"{name} must be comma-separated numbers or @file")
    if arr.shape != (n,):
        raise ValueError(f"{name} must have {n} entries, got {arr.shape[0]}")
    return arr.astype(np.float32)


def _resolve_light(spec: str, engine, gain: float) -> np.ndarray:
    from trava.lightkit import full_on_pattern, olat_pattern

    if gain < 0:
        raise ValueError("light gain must be non-negative")
    if spec == "full":
        vec = full_on_pattern(engine.rig).intensities
    elif spec.startswith("olat:"):
        vec = olat_pattern(engine.rig, int(spec[len("olat:"):])).intensities
    elif spec.startswith("env:"):
        vec = engine.env_vector(spec[len("env:"):])
    elif os.path.exists(spec):
        vec = np.loadtxt(spec, dtype=np.float64).reshape(1, -1)
        if vec.shape[1] != engine.n_lights:
            raise ValueError(f"light file has {vec.shape[1]} entries, rig has "
                             f"{engine.n_lights}")
        if (vec < 0).any():
            raise ValueError("light values must be non-negative")
    else:
        raise ValueError(f"light spec {spec!r} is not olat:N, env:ID, 'full', "
                         "or a vector file")
    if vec.shape[0] == 1:
        vec = np.repeat(vec, 3, axis=0)
    return (vec * gain).astype(np.float32)


def _state_from_args(engine, args, z=None, light=None):
    state = engine.initial_state()
    fields = {"az": args.az, "el": args.el, "dist": args.dist,
              "exposure": args.exposure}
    if z is not None:
        fields["z"] = np.asarray(z, dtype=np.float32)
    elif getattr(args, "z", None):
        fields["z"] = _parse_floats(args.z, engine.latent_dim, "z")
    if getattr(args, "blend", None):
        fields["blend"] = _parse_floats(args.blend, engine.n_blend, "blend")
    if light is None:
        light = _resolve_light(args.light, engine, args.gain)
    fields["light"] = light.astype(np.float32)
    return dataclasses.replace(state, **fields)


def _add_view_flags(sub) -> None:
    sub.add_argument("--az", type=float, default=0.0, help="orbit azimuth, degrees")
    sub.add_argument("--el", type=float, default=0.0, help="orbit elevation, degrees")
    sub.add_argument("--dist", type=float, default=0.5, help="orbit distance")
    sub.add_argument("--exposure", type=float, default=1.0)
    sub.add_argument("--gain", type=float, default=1.0, help="light gain")


def cmd_synth(args) -> int:
    from trava.lightkit import build_rig
    from trava.synthcap import generate_dataset, make_subject

    subject = make_subject(seed=args.subject_seed)
    rig = build_rig(n_lights=args.lights, seed=args.light_seed,
                    max_intensity=args.max_intensity)
    generate_dataset(args.out, subject, rig, n_frames=args.frames,
                     seed=args.seed, n_eval=args.eval, resolution=args.resolution)
    print(args.out)
    return 0


def cmd_train(args) -> int:
    from trava.training import load_config, train

    cfg = load_config(args.config)
    overrides = {k: getattr(args, k) for k in ("dataset_dir", "out_dir", "steps")
                 if getattr(args, k) is not None}
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    paths = train(cfg)
    print(paths[-1])
    return 0


def cmd_render(args) -> int:
    from trava.lightkit import write_pfm
    from trava.renderer import write_png

    from .engine import RenderEngine

    engine = RenderEngine(args.checkpoint, envdir=args.envdir)
    img = engine.render_state(_state_from_args(engine, args))
    write_png(args.out, img, exposure=args.exposure)
    if args.pfm:
        write_pfm(args.pfm, img.astype(np.float32))
    print(args.out)
    return 0


def cmd_relight(args) -> int:
    from trava.lightkit import write_pfm
    from trava.renderer import write_png

    from .engine import RenderEngine, load_envmap

    engine = RenderEngine(args.checkpoint)
    if args.gain < 0:
        raise ValueError("light gain must be non-negative")
    light = engine.extract_vector(load_envmap(args.env)) * args.gain
    # fixed expression sweep: one seeded latent path, identical on every run
    sweep = 0.5 * np.random.default_rng(7).standard_normal(
        (args.frames, engine.latent_dim))
    os.makedirs(args.out, exist_ok=True)
    for k in range(args.frames):
        state = _state_from_args(engine, args, z=sweep[k], light=light)
        img = engine.render_state(state)
        write_png(os.path.join(args.out, f"frame_{k:03d}.png"), img,
                  exposure=args.exposure)
        write_pfm(os.path.join(args.out, f"frame_{k:03d}.pfm"),
                  img.astype(np.float32))
    print(args.out)
    return 0


def cmd_export(args) -> int:
    from trava.checkpoint import load_checkpoint

    bundle = load_checkpoint(args.checkpoint)
    print(f"checkpoint {args.checkpoint}")
    print(f"step {bundle.step}")
    for key in sorted(bundle.metadata):
        print(f"{key} {bundle.metadata[key]}")
    params = bundle.net.params.state_dict()
    n_bytes = sum(v.nbytes for v in params.values())
    print(f"tensors param={len(params)} adam={len(bundle.adam_state)} "
          f"extra={len(bundle.extras)} param_bytes={n_bytes}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .app import build_app
    from .engine import RenderEngine

    engine = RenderEngine(args.checkpoint, envdir=args.envdir)
    uvicorn.run(build_app(engine), host=args.host, port=args.port,
                log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="trava",
        description="Relightable volumetric avatars: capture, train, serve.")
    sub = p.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic capture")
    synth.add_argument("--out", required=True)
    synth.add_argument("--frames", type=int, default=600)
    synth.add_argument("--eval", type=int, default=50)
    synth.add_argument("--resolution", type=int, default=128)
    synth.add_argument("--seed", type=int, default=0, help="animation/group seed")
    synth.add_argument("--subject-seed", type=int, default=3)
    synth.add_argument("--lights", type=int, default=356)
    synth.add_argument("--light-seed", type=int, default=1)
    synth.add_argument("--max-intensity", type=float, default=0.22)
    synth.set_defaults(func=cmd_synth)

    train = sub.add_parser("train", help="train from a config file")
    train.add_argument("--config", required=True)
    train.add_argument("--dataset-dir")
    train.add_argument("--out-dir")
    train.add_argument("--steps", type=int)
    train.set_defaults(func=cmd_train)

    render = sub.add_parser("render", help="render one frame from a checkpoint")
    render.add_argument("--checkpoint", required=True)
    render.add_argument("--out", required=True, help="PNG path")
    render.add_argument("--pfm", help="also write pre-clip linear radiance")
    render.add_argument("--z", help="latent values: comma list or @file")
    render.add_argument("--blend", help="blendshape weights: comma list or @file")
    render.add_argument("--light", default="full",
                        help="olat:N | env:ID | full | vector file")
    render.add_argument("--envdir", help="directory of .pfm/.hdr maps for env:ID")
    _add_view_flags(render)
    render.set_defaults(func=cmd_render)

    relight = sub.add_parser(
        "relight", help="render an expression sweep under an environment map")
    relight.add_argument("--checkpoint", required=True)
    relight.add_argument("--env", required=True, help=".pfm or .hdr map file")
    relight.add_argument("--out", required=True, help="output directory")
    relight.add_argument("--frames", type=int, default=8)
    _add_view_flags(relight)
    relight.set_defaults(func=cmd_relight)

    export = sub.add_parser("export", help="print a checkpoint report")
    export.add_argument("--checkpoint", required=True)
    export.set_defaults(func=cmd_export)

    serve = sub.add_parser("serve", help="start the render service")
    serve.add_argument("--checkpoint", required=True)
    serve.add_argument("--envdir")
    serve.add_argument("--port", type=int, default=8000)
    serve.add_argument("--host", default="127.0.0.1")
    serve.set_defaults(func=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
