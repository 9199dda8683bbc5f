"""Command line entry point: ``seadvs <command> [options]``.

Errors are reported as one line on stderr, ``error: <kind>: <message>``,
with exit status 2 for bad configs, 3 for missing inputs, 1 otherwise.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import pipeline
from .config import ConfigError, RunConfig, load_config


def _scales(text: str) -> list:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad scale list {text!r}") from None
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("scales must be a nonempty list of positive numbers")
    return vals


def _seeds(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seadvs", description="Underwater event-camera simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_, config=False, workers=False):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--out", required=True, type=Path, help="artifact directory")
        if config:
            p.add_argument("--config", type=Path, help="config file (defaults when omitted)")
            p.add_argument("--seed", type=int, help="override the scene seed")
        if workers:
            p.add_argument("--workers", type=int, default=1, help="threads per stage (output is identical)")
        return p

    p = add("run", "all stages in order", config=True, workers=True)
    p.add_argument("--window-us", type=int, help="DVS video window (frames stage)")
    p = add("sweep", "particle-noise sweep", config=True, workers=True)
    p.add_argument("--scales", type=_scales, default=[1.0, 2.0, 4.0, 8.0], help="comma list, default 1,2,4,8")
    p.add_argument("--seeds", type=_seeds, help="comma list of seeds, one sweep each under seed_<n>/")
    p.add_argument("--axis", choices=("size", "count"), default="size", help="scale radii or particle count")
    add("scene", "write config.txt and scene.txt", config=True)
    add("render", "frames.elum, previews and masks", workers=True)
    add("events", "events.erev and events.csv", workers=True)
    p = add("frames", "DVS video as dvs/ef_*.pgm")
    p.add_argument("--window-us", type=int, help="accumulation window, default from config")
    p = add("export", "YOLO dataset under yolo/", config=True, workers=True)
    p.add_argument("--scales", type=_scales, help="export one dataset per particle scale under scale_<k>/")
    add("eval", "blob detector and mAP report")
    return parser


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_scene(seed=args.seed)
    return cfg


def _export_scales(args) -> None:
    cfg = _config(args)
    for scale in args.scales:
        sub = args.out / f"scale_{pipeline.format_scale(scale)}"
        try:
            pipeline.stage_scene(cfg.with_scene(particle_scale=scale), sub)
            pipeline.stage_render(sub, args.workers)
            pipeline.stage_events(sub, args.workers)
            pipeline.stage_export(sub)
        except Exception as exc:
            raise pipeline.SweepError(scale, exc) from exc
        print(sub / "yolo")


def dispatch(args) -> None:
    cmd, out = args.command, args.out
    if cmd == "run":
        m = pipeline.run_pipeline(_config(args), out, workers=args.workers, window_us=args.window_us)
        print(m.to_text(), end="")
    elif cmd == "sweep":
        cfg = _config(args)
        seeds = args.seeds or [None]
        for seed in seeds:
            where = out if seed is None else out / f"seed_{seed}"
            pipeline.sweep_particles(cfg, where, args.scales, seed=seed, axis=args.axis, workers=args.workers)
            print((where / "sweep.tsv").read_text(), end="")
    elif cmd == "scene":
        pipeline.stage_scene(_config(args), out)
    elif cmd == "render":
        pipeline.stage_render(out, args.workers)
    elif cmd == "events":
        pipeline.stage_events(out, args.workers)
    elif cmd == "frames":
        print(pipeline.stage_frames(out, args.window_us))
    elif cmd == "export":
        if args.scales:
            _export_scales(args)
        else:
            print(pipeline.stage_export(out))
    elif cmd == "eval":
        print(pipeline.stage_eval(out).to_text(), end="")


def _error_kind(exc: BaseException) -> tuple:
    root = exc.__cause__ if isinstance(exc, pipeline.SweepError) and exc.__cause__ else exc
    if isinstance(root, ConfigError):
        return "config", 2
    if isinstance(root, (pipeline.MissingInputError, FileNotFoundError)):
        return "missing-input", 3
    if isinstance(root, OSError):
        return "io", 1
    return "runtime", 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        dispatch(args)
    except Exception as exc:  # reported as a single line
        kind, code = _error_kind(exc)
        message = " ".join(str(exc).split())
        print(f"error: {kind}: {message}", file=sys.stderr)
        return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
