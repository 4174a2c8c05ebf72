"""Efficiency table: wall time and NN calls per search mode and output size.

Mirrors the shape of a mean/std timing table over repeated seeds.  Absolute
numbers depend on the machine; the orderings and call counts are the point.

    python3 scripts/run_benchmark.py --sizes 128x128,256x256 --reps 3 --max-iters 1
"""
import argparse
import csv
import json
from pathlib import Path

from persyn.image_core import load_image
from persyn.optimizer import OptimizerConfig
from persyn.pipeline import MODES, benchmark
from persyn.scale_map import ViewAngles

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--exemplar", type=Path, default=ROOT / "tests" / "data" / "brick_105.png")
    ap.add_argument("--sizes", default="128x128,256x256")
    ap.add_argument("--reps", type=int, default=1)
    ap.add_argument("--modes", default=",".join(MODES))
    ap.add_argument("--max-iters", type=int, default=1,
                    help="iterations per level; full-dimension brute force is slow")
    ap.add_argument("--out", type=Path, default=ROOT / "results" / "benchmark")
    args = ap.parse_args()

    sizes = [tuple(int(v) for v in s.split("x")) for s in args.sizes.split(",")]
    modes = args.modes.split(",")
    ex = load_image(args.exemplar)
    cfg = OptimizerConfig(max_iterations=args.max_iters)

    def progress(row):
        print(f"  {row['mode']:>15} {row['width']}x{row['height']} seed {row['seed']}: "
              f"{row['wall_millis'] / 1e3:7.2f} s  {row['nn_calls']:>9} calls", flush=True)

    summary, raw = benchmark(ex, ViewAngles(30, 18), sizes, args.reps, modes, cfg,
                             progress=progress)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "runs.json").write_text(json.dumps(raw, indent=2))
    with open(args.out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]))
        w.writeheader()
        w.writerows(summary)

    print(f"\n{'size':>9} {'mode':>15} {'mean s':>8} {'std s':>7} {'calls':>10}")
    for r in summary:
        print(f"{r['size']:>9} {r['mode']:>15} {r['mean_millis'] / 1e3:8.2f} "
              f"{r['std_millis'] / 1e3:7.2f} {r['mean_nn_calls']:10.0f}")
    base = {r["size"]: r for r in summary if r["mode"] == "pixel+brute"}
    for r in summary:
        if r["mode"] == "patch+tree+pca" and r["size"] in base:
            b = base[r["size"]]
            print(f"{r['size']}: speed-up {b['mean_millis'] / r['mean_millis']:.1f}x, "
                  f"call ratio {b['mean_nn_calls'] / r['mean_nn_calls']:.1f}x")


if __name__ == "__main__":
    main()
