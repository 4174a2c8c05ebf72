"""Command-line front end: ``persyn synth | scalemap | bench``.

Exit codes: 0 success, 1 runtime error (I/O, bad input data), 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .ann_index import QueryBudget
from .errors import PersynError
from .image_core import load_image, normalize_scale, save_gray_png, save_image
from .neighborhood import PatchSpec
from .optimizer import OptimizerConfig
from .pipeline import MODES, SynthesisRequest, benchmark, synthesize
from .scale_map import ViewAngles, compute_scale_map, save_scale_map

log = logging.getLogger("persyn")


def _size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return w, h


def _sizes(text: str) -> list[tuple[int, int]]:
    return [_size(s) for s in text.split(",") if s]


def _ranged(lo, hi, kind=float, lo_open=False, hi_open=True):
    def conv(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
        if (v < lo or (lo_open and v == lo)) or (hi is not None and (v > hi or (hi_open and v == hi))):
            raise argparse.ArgumentTypeError(f"{v} outside allowed range")
        return v
    return conv


def _add_view_flags(p, required=True):
    p.add_argument("--sigma", type=_ranged(0, 90), required=required, default=30.0,
                   help="slant angle in degrees, [0, 90)")
    p.add_argument("--tau", type=_ranged(0, 360), required=required, default=18.0,
                   help="tilt angle in degrees, [0, 360)")


def _add_optimizer_flags(p):
    g = p.add_argument_group("optimizer")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--levels", type=_ranged(1, None, int, hi_open=False), default=2)
    g.add_argument("--nbhd", type=_ranged(2, None, int, hi_open=False), default=8,
                   help="neighbourhood width w")
    g.add_argument("--spacing", type=_ranged(1, None, int, hi_open=False), default=None,
                   help="sparse grid interval (default w/4)")
    g.add_argument("--patch", type=_ranged(1, None, int, hi_open=False), default=2,
                   help="patch width w' (1 = per-pixel processing)")
    g.add_argument("--r", type=_ranged(0, 2, lo_open=True), default=0.8, help="robust exponent")
    g.add_argument("--epsilon", type=_ranged(0, None, lo_open=True), default=1e-4)
    g.add_argument("--max-iters", type=_ranged(1, None, int, hi_open=False), default=20)
    g.add_argument("--converge", type=_ranged(0, 1, lo_open=True), default=0.01,
                   help="stop when fewer than this fraction of assignments change")
    g.add_argument("--bins", type=_ranged(2, None, int, hi_open=False), default=16)
    g.add_argument("--no-hist", action="store_true", help="disable histogram reweighting")
    g.add_argument("--hist-scale", action="store_true",
                   help="include the scale channel in histogram matching")
    g.add_argument("--search", choices=("tree", "brute"), default="tree")
    g.add_argument("--query", choices=("greedy", "backtrack", "exact"), default="backtrack")
    g.add_argument("--max-leaves", type=_ranged(1, None, int, hi_open=False), default=4)
    g.add_argument("--no-pca", action="store_true")
    g.add_argument("--variance", type=_ranged(0, 1, lo_open=True, hi_open=False), default=0.95)
    g.add_argument("--tree-k", type=_ranged(2, None, int, hi_open=False), default=4)


def _config(args) -> OptimizerConfig:
    spacing = args.spacing if args.spacing is not None else max(1, args.nbhd // 4)
    return OptimizerConfig(
        r=args.r, epsilon=args.epsilon, max_iterations=args.max_iters,
        convergence_fraction=args.converge, histogram_matching=not args.no_hist,
        histogram_bins=args.bins, histogram_channels=(0, 1, 2, 3) if args.hist_scale else (0, 1, 2),
        nbhd_width=args.nbhd, spacing=spacing, patch=PatchSpec(args.patch), search=args.search,
        use_pca=not args.no_pca, variance_target=args.variance,
        budget=QueryBudget(args.query, args.max_leaves), tree_k=args.tree_k, seed=args.seed)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    parser = argparse.ArgumentParser(prog="persyn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="synthesize a perspective texture")
    p.add_argument("--in", dest="inp", required=True, type=Path, help="exemplar PNG/PPM")
    p.add_argument("--out", required=True, type=Path, help="output PNG/PPM")
    p.add_argument("--out-size", required=True, type=_size, help="WxH")
    _add_view_flags(p)
    _add_optimizer_flags(p)
    p.add_argument("--report", type=Path, help="write a JSON synthesis report")
    p.add_argument("--trace", type=Path, help="write the final level's energy trace as JSON lines")
    p.add_argument("--emit-scalemaps", type=Path, metavar="DIR",
                   help="write exemplar/output scale maps (PSM1 + PNG preview) here")
    p.add_argument("--no-timing", action="store_true",
                   help="omit wall-clock fields from report and trace (reproducible bytes)")
    p.set_defaults(func=run_synth)

    p = sub.add_parser("scalemap", parents=[common], help="compute a perspective scale map")
    p.add_argument("--size", required=True, type=_size, help="WxH")
    _add_view_flags(p)
    p.add_argument("--out", required=True, type=Path, help="PSM1 output file")
    p.add_argument("--preview", type=Path, help="grayscale PNG preview (default: OUT with .png)")
    p.set_defaults(func=run_scalemap)

    p = sub.add_parser("bench", parents=[common], help="time synthesis modes over output sizes")
    p.add_argument("--in", dest="inp", required=True, type=Path)
    p.add_argument("--sizes", type=_sizes, default=[(128, 128), (256, 256)], help="WxH,WxH,...")
    p.add_argument("--reps", type=_ranged(1, None, int, hi_open=False), default=1)
    p.add_argument("--modes", default=",".join(MODES),
                   help=f"comma-separated subset of {', '.join(MODES)}")
    _add_view_flags(p, required=False)
    _add_optimizer_flags(p)
    p.add_argument("--json", type=Path, help="write summary and raw rows as JSON")
    p.add_argument("--csv", type=Path, help="write the summary table as CSV")
    p.set_defaults(func=run_bench)
    return parser


def run_synth(args) -> int:
    exemplar = load_image(args.inp)
    view = ViewAngles(args.sigma, args.tau)
    w, h = args.out_size
    req = SynthesisRequest(exemplar, view, w, h, _config(args), args.levels, args.seed)
    img, report = synthesize(req)
    save_image(img, args.out)
    log.info("wrote %s (%dx%d), part1 %.0f ms, part2 %.0f ms, %d NN calls", args.out, w, h,
             report.part1_millis, report.part2_millis, report.total_nn_calls)
    timing = not args.no_timing
    if args.report:
        args.report.write_text(report.to_json(timing))
    if args.trace:
        args.trace.write_text(report.levels[-1].trace.to_jsonl(timing))
    if args.emit_scalemaps:
        args.emit_scalemaps.mkdir(parents=True, exist_ok=True)
        for name, (mw, mh) in (("exemplar", exemplar.shape), ("output", (w, h))):
            smap = compute_scale_map(mw, mh, view)
            save_scale_map(smap, args.emit_scalemaps / f"{name}.psm")
            _preview(smap, args.emit_scalemaps / f"{name}.png")
    return 0


def _preview(smap, path) -> None:
    save_gray_png(normalize_scale(smap.values, smap.bounds.s_min, smap.bounds.s_max), path)


def run_scalemap(args) -> int:
    w, h = args.size
    smap = compute_scale_map(w, h, ViewAngles(args.sigma, args.tau))
    save_scale_map(smap, args.out)
    _preview(smap, args.preview or args.out.with_suffix(".png"))
    return 0


def run_bench(args) -> int:
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    unknown = [m for m in modes if m not in MODES]
    if unknown:
        raise ValueError(f"unknown mode(s): {', '.join(unknown)}")
    # decode outside the timed region
    exemplar = load_image(args.inp)
    view = ViewAngles(args.sigma, args.tau)

    def progress(row):
        log.info("%s %dx%d seed %d: %.0f ms, %d NN calls", row["mode"], row["width"],
                 row["height"], row["seed"], row["wall_millis"], row["nn_calls"])

    summary, raw = benchmark(exemplar, view, args.sizes, args.reps, modes, _config(args),
                             args.levels, args.seed, progress)
    print(f"{'size':>9} {'mode':>15} {'mean ms':>10} {'std ms':>9} {'NN calls':>10}")
    for row in summary:
        print(f"{row['size']:>9} {row['mode']:>15} {row['mean_millis']:>10.0f} "
              f"{row['std_millis']:>9.0f} {row['mean_nn_calls']:>10.0f}")
    if args.json:
        args.json.write_text(json.dumps({"summary": summary, "runs": raw}, indent=2))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(summary[0]))
            writer.writeheader()
            writer.writerows(summary)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors this way
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        return args.func(args)
    except (PersynError, OSError, ValueError) as exc:
        print(f"persyn: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # never dump a traceback on the user
        print(f"persyn: internal error: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
