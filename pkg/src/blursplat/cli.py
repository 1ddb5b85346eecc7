"""Command-line surface: generate / train / render / eval / inspect-blur."""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np
import torch


def _add_generate(sub):
    p = sub.add_parser("generate", help="write a synthetic dataset directory")
    p.add_argument("--preset", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--frames", type=int, default=12)
    p.add_argument(
        "--kernel",
        default="gaussian",
        choices=["gaussian", "linear", "none", "random-gaussian", "random-linear"],
    )
    p.add_argument("--sigma", type=float, default=1.5)
    p.add_argument("--angle-deg", type=float, default=0.0)
    p.add_argument("--length", type=int, default=5)
    p.add_argument("--kernel-size", type=int, default=9, choices=[5, 7, 9, 11, 13])
    p.add_argument("--static-only", action="store_true")


def _add_train(sub):
    p = sub.add_parser("train", help="optimize a scene against a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON TrainConfig; CLI flags override it")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-blur-model", action="store_true")
    p.add_argument("--no-unseen", action="store_true")
    p.add_argument("--kernel-size", type=int, choices=[5, 7, 9, 11, 13])
    p.add_argument("--checkpoint-interval", type=int)
    p.add_argument("--non-deterministic", action="store_true")


def _add_render(sub):
    p = sub.add_parser("render", help="render checkpoint views to PNGs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--views", default="train", choices=["train", "eval"])
    p.add_argument("--frames", help="comma-separated frame list (default: all)")


def _add_eval(sub):
    p = sub.add_parser("eval", help="evaluate a checkpoint against ground truth")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="report JSON path (also printed to stdout)")


def _add_inspect(sub):
    p = sub.add_parser("inspect-blur", help="visualize predicted kernels and intensity")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--pixels", help='semicolon list "u,v;u,v"; default: a 5x5 grid')
    p.add_argument("--upscale", type=int, default=20)


def _save_png(path, arr01):
    from PIL import Image

    a = np.clip(np.rint(np.asarray(arr01) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(a).save(path)


def _cmd_generate(args) -> int:
    from .synth import KernelSpec, generate_sequence, save_dataset

    spec = KernelSpec(
        kind=args.kernel,
        size=args.kernel_size,
        sigma=args.sigma,
        angle=math.radians(args.angle_deg),
        length=args.length,
    )
    seq = generate_sequence(
        args.preset,
        seed=args.seed,
        resolution=args.resolution,
        num_frames=args.frames,
        kernel=spec,
        static_only=args.static_only,
    )
    out = save_dataset(seq, args.out)
    print(f"wrote dataset: {out}")
    return 0


def _cmd_train(args) -> int:
    from .config import TrainConfig
    from .synth import load_dataset
    from .train import train

    cfg = TrainConfig.load(args.config) if args.config else TrainConfig()
    if args.iterations is not None:
        cfg.schedule.total_iterations = args.iterations
    if args.seed is not None:
        cfg.seed = args.seed
    if args.no_blur_model:
        cfg.blur_enabled = False
    if args.no_unseen:
        cfg.unseen_enabled = False
    if args.kernel_size is not None:
        cfg.model.kernel_size = args.kernel_size
    if args.checkpoint_interval is not None:
        cfg.checkpoint_interval = args.checkpoint_interval
    if args.non_deterministic:
        cfg.deterministic = False
    cfg.validate()
    seq = load_dataset(args.data)
    result = train(seq, cfg, out_dir=args.out)
    print(f"trained; checkpoint: {result.checkpoint_path}")
    return 0


def _load(args):
    from .checkpoint import load_scene
    from .synth import load_dataset

    scene, blur_model, meta = load_scene(args.checkpoint)
    seq = load_dataset(args.data)
    return scene, blur_model, meta, seq


def _cmd_render(args) -> int:
    from .render import render_scene

    scene, blur_model, _, seq = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    frames = (
        [int(x) for x in args.frames.split(",")] if args.frames else list(range(seq.num_frames))
    )
    cams = seq.cameras if args.views == "train" else seq.eval_cameras
    with torch.no_grad():
        for t in frames:
            r = render_scene(
                scene, cams[t], t, background=seq.background,
                background_depth=seq.background_depth,
            )
            _save_png(out / f"sharp_{t:03d}.png", r.image.clamp(0, 1))
            _save_png(out / f"depth_{t:03d}.png", (r.depth / seq.background_depth).clamp(0, 1))
            _save_png(out / f"mask_{t:03d}.png", r.mask.clamp(0, 1))
            if blur_model is not None and args.views == "train":
                from .blur import synthesize_blur

                field = blur_model(r, t)
                _save_png(out / f"blurred_{t:03d}.png", synthesize_blur(r, field).clamp(0, 1))
                _save_png(out / f"intensity_{t:03d}.png", field.intensity.clamp(0, 1))
    print(f"wrote renders to {out}")
    return 0


def _cmd_eval(args) -> int:
    from .metrics import evaluate_sequence

    scene, blur_model, _, seq = _load(args)
    report = evaluate_sequence(scene, blur_model, seq)
    text = report.to_json()
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


def _cmd_inspect(args) -> int:
    from .render import render_scene

    scene, blur_model, _, seq = _load(args)
    if blur_model is None:
        print("checkpoint has no blur model", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t = args.frame
    with torch.no_grad():
        r = render_scene(
            scene, seq.cameras[t], t, background=seq.background,
            background_depth=seq.background_depth,
        )
        field = blur_model(r, t)
    K = field.kernel_size
    H, W = field.intensity.shape
    if args.pixels:
        pts = [tuple(int(v) for v in p.split(",")) for p in args.pixels.split(";")]
    else:
        us = np.linspace(W * 0.1, W * 0.9, 5).astype(int)
        vs = np.linspace(H * 0.1, H * 0.9, 5).astype(int)
        pts = [(u, v) for v in vs for u in us]
    _save_png(out / f"intensity_{t:03d}.png", field.intensity.clamp(0, 1))
    field.kernels.numpy().astype("<f4").tofile(out / f"kernels_{t:03d}.f32")
    up = args.upscale
    for u, v in pts:
        k = field.kernels[v, u].reshape(K, K).numpy()
        k = k / max(k.max(), 1e-12)
        big = np.kron(k, np.ones((up, up)))
        _save_png(out / f"kernel_{t:03d}_u{u:03d}_v{v:03d}.png", big)
    print(f"wrote kernel visualizations to {out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="blursplat",
        description="Dynamic Gaussian splatting with joint per-pixel blur estimation",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    _add_generate(sub)
    _add_train(sub)
    _add_render(sub)
    _add_eval(sub)
    _add_inspect(sub)
    args = parser.parse_args(argv)
    handlers = {
        "generate": _cmd_generate,
        "train": _cmd_train,
        "render": _cmd_render,
        "eval": _cmd_eval,
        "inspect-blur": _cmd_inspect,
    }
    try:
        return handlers[args.command](args)
    except (ValueError, FileNotFoundError, KeyError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
