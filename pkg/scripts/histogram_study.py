"""Histogram reweighting on vs off: per-channel L1 distance to the exemplar.

    python3 scripts/histogram_study.py --seeds 3
"""
import argparse
from pathlib import Path

import numpy as np

from persyn.image_core import load_image
from persyn.optimizer import OptimizerConfig, build_histograms
from persyn.pipeline import SynthesisRequest, synthesize
from persyn.scale_map import ViewAngles

ROOT = Path(__file__).resolve().parents[1]


def l1(a, b, bins=16):
    ha, hb = build_histograms(a.pixels, bins).hists, build_histograms(b.pixels, bins).hists
    return float(np.mean(np.sum(np.abs(ha - hb), axis=1)))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--size", type=int, default=128)
    args = ap.parse_args()
    view = ViewAngles(30, 18)
    print(f"{'exemplar':>10} {'with':>8} {'without':>8}")
    for path in sorted((ROOT / "tests" / "data").glob("*.png")):
        ex = load_image(path)
        res = {}
        for on in (True, False):
            d = []
            for s in range(args.seeds):
                cfg = OptimizerConfig(histogram_matching=on, seed=s)
                img, _ = synthesize(SynthesisRequest(ex, view, args.size, args.size, cfg, seed=s))
                d.append(l1(img, ex))
            res[on] = np.mean(d)
        print(f"{path.stem:>10} {res[True]:8.4f} {res[False]:8.4f}")


if __name__ == "__main__":
    main()
