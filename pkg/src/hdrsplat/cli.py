"""Command-line interface: generate, train, render, eval, gradcheck.

Exit codes: 0 success, 1 validation error (bad flags, bad config, missing
ground truth), 2 I/O error (unreadable or malformed files).
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint
from .configio import ConfigError, read_config
from .dataset import load_dataset
from .gradcheck import DEFAULT_MEDIAN_TOL, format_results, run_gradcheck
from .imgio import ImageFormatError, write_pfm, write_ppm
from .losses import merge_ldr
from .metrics import evaluate, format_report, write_report
from .pipeline import render_view
from .scenegen import crf_from_config, emit_dataset, generate_scene
from .trainer import train


class CliUsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliUsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hdrsplat", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="synthesize a multi-exposure dataset")
    g.add_argument("--config", required=True)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train on a dataset directory")
    t.add_argument("--config", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)

    r = sub.add_parser("render", help="render a view from a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--view", type=int, required=True)
    r.add_argument("--exposure", type=float, required=True)
    r.add_argument("--source", choices=("3d", "2d", "merged", "hdr"), default="merged")
    r.add_argument("--white-balance", default=None, help="r,g,b channel gains")
    r.add_argument("--data", required=True, help="dataset directory providing cameras")
    r.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="score a checkpoint on the test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--tracks", default="ldr-oe,ldr-ne,hdr")
    e.add_argument("--source", choices=("i3d", "i2d", "merged", "3d", "2d"), default="merged")
    e.add_argument("--out", required=True)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tolerance", type=float, default=DEFAULT_MEDIAN_TOL)
    gc.add_argument("--samples", type=int, default=0, help="cap per-group checks (0 = all)")
    return p


def _cmd_generate(args) -> int:
    cfg = read_config(args.config)
    cloud, cameras = generate_scene(cfg.scene)
    crf = crf_from_config(cfg.scene)
    emit_dataset(cloud, cameras, crf, cfg.scene, args.out, options=cfg.render)
    print(f"wrote dataset with {len(cameras)} views to {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = read_config(args.config)
    ds = load_dataset(args.data)
    _, final = train(cfg, ds, args.out)
    print(f"final checkpoint: {final}")
    return 0


def _cmd_render(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    if args.view not in ds.cameras:
        raise ValueError(f"view {args.view} not present in {args.data}")
    cloud = ckpt.cloud
    if args.white_balance:
        factors = np.asarray([float(x) for x in args.white_balance.split(",")])
        if factors.shape != (3,) or np.any(factors <= 0):
            raise ValueError("white balance needs three positive gains r,g,b")
        # pre-tone-map gain on irradiance scales every rendered path coherently
        cloud = cloud.copy()
        cloud.log_irradiance = cloud.log_irradiance + np.log(factors)[None, :]
    ro = render_view(cloud, ckpt.bank, ds.cameras[args.view], args.exposure)
    if args.source == "hdr":
        write_pfm(args.out, ro.e_hdr)
    else:
        if args.source == "3d":
            img = ro.i3d
        elif args.source == "2d":
            img = ro.i2d
        else:
            img = merge_ldr(ro.i3d, ro.i2d, ro.u3d, ro.u2d)
        write_ppm(args.out, img)
    print(f"wrote {args.source} render of view {args.view} to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.data)
    tracks = tuple(t.strip() for t in args.tracks.split(",") if t.strip())
    source = {"3d": "i3d", "2d": "i2d"}.get(args.source, args.source)
    report = evaluate(ckpt.cloud, ckpt.bank, ds, tracks=tracks, ldr_source=source)
    write_report(report, args.out)
    print(format_report(report), end="")
    return 0


def _cmd_gradcheck(args) -> int:
    results = run_gradcheck(
        args.seed, max_samples=args.samples if args.samples > 0 else None
    )
    print(format_results(results))
    ok = all(r.passes(args.tolerance) for r in results)
    print("gradcheck:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler = {
            "generate": _cmd_generate,
            "train": _cmd_train,
            "render": _cmd_render,
            "eval": _cmd_eval,
            "gradcheck": _cmd_gradcheck,
        }[args.command]
        return handler(args)
    except CliUsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ImageFormatError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
