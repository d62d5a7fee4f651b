"""Command-line entry points.

    ogmap synth --preset room --out data/room
    ogmap run --dataset data/room --out runs/room
    ogmap eval --model runs/room/model.ogmp --dataset data/room
    ogmap render --model runs/room/model.ogmp --dataset data/room --frame 0 --out f0
    ogmap ablate-keyframes --dataset data/room --out ablation.json
    ogmap export-ply --model runs/room/model.ogmp --out anchors.ply
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .checkpoint import export_ply, load_checkpoint
from .config import RunConfig
from .datasets import load_dataset
from .image_io import write_depth_raw, write_ppm
from .mapping import STRATEGIES, ablate_keyframes, evaluate, run_mapping
from .synth import generate


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        config = RunConfig.from_json(Path(args.config).read_text())
    else:
        config = RunConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "strategy", None) is not None:
        overrides["strategy"] = args.strategy
    if getattr(args, "iterations", None) is not None:
        overrides["iterations"] = args.iterations
    if getattr(args, "voxel_size", None) is not None:
        overrides["voxel_size"] = args.voxel_size
    if getattr(args, "no_growth", False):
        overrides["growth"] = False
    if getattr(args, "sparse", False):
        overrides["sparse"] = True
    if getattr(args, "no_timing", False):
        overrides["log_timing"] = False
    return dataclasses.replace(config, **overrides) if overrides else config


def cmd_synth(args) -> int:
    ds = generate(
        args.preset,
        frames=args.frames,
        width=args.width,
        height=args.height,
        seed=args.seed,
        depth_noise=args.depth_noise,
        out_dir=args.out,
    )
    print(f"wrote {len(ds)} frames ({ds.width}x{ds.height}) to {args.out}")
    return 0


def cmd_run(args) -> int:
    config = _load_config(args)
    dataset = load_dataset(args.dataset)

    def show(row):
        tag = "KF" if row["is_keyframe"] else "  "
        print(
            f"frame {row['frame_id']:4d} {tag} "
            f"anchors {row['anchors_L0']}/{row['anchors_L1']}/{row['anchors_L2']} "
            f"loss {row['total']:.4f} psnr {row['psnr']:.2f}"
        )

    result = run_mapping(dataset, config, out_dir=args.out, progress=None if args.quiet else show)
    last = result.rows[-1]
    print(
        f"done: {len(result.registry)} keyframes, {result.scene.n_anchors} anchors, "
        f"final psnr {last['psnr']:.2f} dB"
    )
    if args.out:
        print(f"outputs in {args.out}: log.csv, model.ogmp, config.json")
    return 0


def cmd_eval(args) -> int:
    scene, config = load_checkpoint(args.model)
    dataset = load_dataset(args.dataset)
    ev = evaluate(scene, dataset, tile=config.tile)
    text = json.dumps(ev, sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(
        f"mean psnr {ev['mean_psnr']:.2f} dB  mean ssim {ev['mean_ssim']:.4f}  "
        f"mean depth-L1 {ev['mean_depth_l1_cm']:.3f} cm over {len(ev['frames'])} frames"
    )
    return 0


def cmd_render(args) -> int:
    from .mapping import render_view

    scene, config = load_checkpoint(args.model)
    dataset = load_dataset(args.dataset)
    if not 0 <= args.frame < len(dataset):
        print(f"frame {args.frame} out of range (dataset has {len(dataset)})", file=sys.stderr)
        return 2
    cam = dataset.camera(args.frame)
    out, _ = render_view(scene, cam, tile=config.tile)
    color_path = f"{args.out}_color.ppm"
    depth_path = f"{args.out}_depth.raw"
    write_ppm(color_path, out.color)
    write_depth_raw(depth_path, out.depth)
    print(f"wrote {color_path} and {depth_path}")
    return 0


def cmd_ablate(args) -> int:
    config = _load_config(args)
    dataset = load_dataset(args.dataset)
    strategies = args.strategies.split(",") if args.strategies else STRATEGIES

    def show(strategy, row):
        print(
            f"{strategy:14s} psnr {row['mean_psnr']:.2f} dB  ssim {row['mean_ssim']:.4f}  "
            f"depth-L1 {row['mean_depth_l1_cm']:.3f} cm  "
            f"({row['n_keyframes']} keyframes, {row['n_anchors']} anchors)"
        )

    summary = ablate_keyframes(dataset, config, strategies=strategies, progress=show)
    if args.out:
        Path(args.out).write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
        print(f"wrote {args.out}")
    return 0


def cmd_export_ply(args) -> int:
    scene, _ = load_checkpoint(args.model)
    export_ply(args.out, scene)
    print(f"wrote {scene.n_anchors} anchors to {args.out}")
    return 0


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (defaults applied otherwise)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--strategy", choices=STRATEGIES, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--voxel-size", type=float, default=None, dest="voxel_size")
    p.add_argument("--no-growth", action="store_true", dest="no_growth")
    p.add_argument("--sparse", action="store_true")
    p.add_argument("--no-timing", action="store_true", dest="no_timing",
                   help="log wall_ms as 0 for reproducible CSVs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ogmap", description="Online RGB-D Gaussian mapping")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic RGB-D dataset")
    p.add_argument("--preset", default="room", choices=("room", "hifreq", "sweep"))
    p.add_argument("--frames", type=int, default=20)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--depth-noise", type=float, default=0.0, dest="depth_noise")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run", help="map a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--quiet", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="evaluate a checkpoint against a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=None, help="write full per-frame JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="render one frame from a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--out", required=True, help="output prefix for _color.ppm / _depth.raw")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("ablate-keyframes", help="compare window strategies on one dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--strategies", default=None, help="comma list, default all four")
    p.add_argument("--out", default=None, help="write summary JSON here")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-ply", help="dump anchor centers as colored PLY")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_ply)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
