"""End-to-end perspective texture synthesis.

Part 1 (pre-processing) computes scale maps for the exemplar and the output
at every pyramid level and fills the coarsest output by copying exemplar
pixels of matching scale.  Part 2 optimizes each level in turn, seeding the
next level with a bilinear x2 upsampling of the previous result.
"""
from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .ann_index import NeighborhoodIndex
from .errors import DegenerateSizeError
from .image_core import (RasterImage, RgbsImage, attach_scale_channel, downsample,
                         normalize_scale, resize_bilinear_array)
from .neighborhood import GridSpec, PatchSpec, extract_all
from .optimizer import EnergyTrace, OptimizerConfig, optimize_level
from .scale_map import ScaleMap, ViewAngles, compute_scale_map

SCALE_MATCH_TOL = 1e-3


@dataclass
class SynthesisRequest:
    exemplar: RasterImage
    view: ViewAngles
    out_width: int
    out_height: int
    cfg: OptimizerConfig = field(default_factory=OptimizerConfig)
    levels: int = 2
    seed: int = 0

    def level_factors(self) -> list[int]:
        return [2 ** (self.levels - 1 - i) for i in range(self.levels)]

    def validate(self) -> None:
        w = self.cfg.nbhd_width
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        for f in self.level_factors():
            ow, oh = self.out_width // f, self.out_height // f
            ew, eh = self.exemplar.width // f, self.exemplar.height // f
            if min(ow, oh, ew, eh) < w:
                raise DegenerateSizeError(
                    f"level /{f} would be {ow}x{oh} (exemplar {ew}x{eh}); "
                    f"all levels must be at least {w}x{w}")


@dataclass
class LevelReport:
    width: int
    height: int
    trace: EnergyTrace
    pca_dim: int
    tree_depth: int
    millis: float

    @property
    def nn_calls(self) -> int:
        return self.trace.nn_calls


@dataclass
class SynthesisReport:
    levels: list[LevelReport]
    part1_millis: float
    part2_millis: float
    config: dict
    out_scale: np.ndarray | None = field(default=None, repr=False)

    @property
    def total_nn_calls(self) -> int:
        return sum(lv.nn_calls for lv in self.levels)

    @property
    def final_energy(self) -> float:
        return self.levels[-1].trace.energies[-1]

    def to_dict(self, timing: bool = True) -> dict:
        levels = []
        for lv in self.levels:
            d = {"width": lv.width, "height": lv.height, "pca_dim": lv.pca_dim,
                 "tree_depth": lv.tree_depth, "nn_calls": lv.nn_calls,
                 "trace": lv.trace.to_dicts(timing)}
            if timing:
                d["millis"] = lv.millis
            levels.append(d)
        out = {"levels": levels, "total_nn_calls": self.total_nn_calls,
               "final_energy": self.final_energy, "config": self.config}
        if timing:
            out["part1_millis"] = self.part1_millis
            out["part2_millis"] = self.part2_millis
        return out

    def to_json(self, timing: bool = True) -> str:
        return json.dumps(self.to_dict(timing), indent=2, default=str)


def initialize_output(exemplar: RgbsImage, out_smap: ScaleMap, rng: np.random.Generator) -> RgbsImage:
    """Fill each output pixel with an exemplar pixel of (nearly) the same scale.

    Candidates are exemplar pixels whose scale lies within ``SCALE_MATCH_TOL``
    of the target; one is drawn uniformly.  With no candidate, the exemplar
    pixel of nearest scale is used (lowest row-major index on ties).
    """
    b = out_smap.bounds
    ex_s = (b.s_min + exemplar.scale_plane * b.s_delta).ravel() if b.s_delta > 0 \
        else np.full(exemplar.width * exemplar.height, b.s_max)
    ex_rgb = exemplar.base.pixels[:, :, :3].reshape(-1, 3)
    order = np.argsort(ex_s, kind="stable")
    s_sorted = ex_s[order]
    target = out_smap.values.ravel()
    lo = np.searchsorted(s_sorted, target - SCALE_MATCH_TOL, side="left")
    hi = np.searchsorted(s_sorted, target + SCALE_MATCH_TOL, side="right")
    count = hi - lo
    u = rng.random(len(target))
    pick = np.empty(len(target), dtype=np.intp)
    ok = count > 0
    pick[ok] = order[lo[ok] + np.minimum((u[ok] * count[ok]).astype(np.intp), count[ok] - 1)]
    for i in np.flatnonzero(~ok):
        pick[i] = int(np.argmin(np.abs(ex_s - target[i])))
    rgb = ex_rgb[pick].reshape(out_smap.height, out_smap.width, 3)
    s = normalize_scale(out_smap.values, b.s_min, b.s_max)
    return RgbsImage(RasterImage(rgb), s)


def synthesize(req: SynthesisRequest) -> tuple[RasterImage, SynthesisReport]:
    req.validate()
    cfg = req.cfg
    t0 = time.perf_counter()
    # part 1: scale maps for every level and the scale-matched initial output
    plan = []
    for f in req.level_factors():
        ex = downsample(req.exemplar.rgb(), f)
        ex_map = compute_scale_map(ex.width, ex.height, req.view)
        out_map = compute_scale_map(req.out_width // f, req.out_height // f, req.view)
        plan.append((attach_scale_channel(ex, ex_map), out_map))
    rng = np.random.default_rng(req.seed)
    current = initialize_output(plan[0][0], plan[0][1], rng)
    part1 = (time.perf_counter() - t0) * 1e3

    # part 2: optimization, coarse to fine
    t1 = time.perf_counter()
    reports = []
    for level, (ex, out_map) in enumerate(plan):
        tl = time.perf_counter()
        s_target = normalize_scale(out_map.values, out_map.bounds.s_min, out_map.bounds.s_max)
        if level > 0:
            up = resize_bilinear_array(current.stack(), out_map.width, out_map.height)
            up[:, :, 3] = s_target
            current = RgbsImage.from_stack(up)
        nb = extract_all(ex, GridSpec(ex.width, ex.height, cfg.nbhd_width, 1))
        index = NeighborhoodIndex(nb.vectors, use_pca=cfg.use_pca,
                                  variance_target=cfg.variance_target, method=cfg.search,
                                  budget=cfg.budget, k=cfg.tree_k, seed=cfg.seed + level,
                                  threads=cfg.threads)
        current, trace, _ = optimize_level(current, ex, index, cfg)
        reports.append(LevelReport(
            out_map.width, out_map.height, trace, index.dim,
            index.tree.depth if index.tree is not None else 0,
            (time.perf_counter() - tl) * 1e3))
    part2 = (time.perf_counter() - t1) * 1e3
    report = SynthesisReport(reports, part1, part2,
                             {**cfg.to_dict(), "levels": req.levels, "seed": req.seed,
                              "sigma": req.view.sigma, "tau": req.view.tau,
                              "out_width": req.out_width, "out_height": req.out_height},
                             out_scale=current.scale_plane)
    return current.base, report


# ---------------------------------------------------------------- comparisons

@dataclass(frozen=True)
class Mode:
    name: str
    patch_width: int
    search: str
    use_pca: bool

    def apply(self, cfg: OptimizerConfig) -> OptimizerConfig:
        return replace(cfg, patch=PatchSpec(self.patch_width), search=self.search,
                       use_pca=self.use_pca)


MODES = {
    "pixel+brute": Mode("pixel+brute", 1, "brute", False),
    "pixel+tree": Mode("pixel+tree", 1, "tree", False),
    "patch+tree+pca": Mode("patch+tree+pca", 2, "tree", True),
}


def compare_modes(req: SynthesisRequest, modes) -> list[dict]:
    """Run the same request once per mode; one row per mode."""
    rows = []
    for m in modes:
        m = MODES[m] if isinstance(m, str) else m
        _, rep = synthesize(replace(req, cfg=m.apply(req.cfg)))
        rows.append({
            "mode": m.name, "patch_width": m.patch_width, "search": m.search,
            "use_pca": m.use_pca, "width": req.out_width, "height": req.out_height,
            "seed": req.seed, "wall_millis": rep.part1_millis + rep.part2_millis,
            "part1_millis": rep.part1_millis, "part2_millis": rep.part2_millis,
            "nn_calls": rep.total_nn_calls, "final_energy": rep.final_energy,
            "iterations": [len(lv.trace) for lv in rep.levels],
        })
    return rows


def benchmark(exemplar: RasterImage, view: ViewAngles, sizes, reps: int = 1,
              modes=tuple(MODES), cfg: OptimizerConfig | None = None, levels: int = 2,
              seed: int = 0, progress=None) -> tuple[list[dict], list[dict]]:
    """Timing table over ``sizes x modes`` with ``reps`` seeds per cell.

    Returns ``(summary_rows, raw_rows)``; summaries carry mean and sample
    standard deviation of wall time in milliseconds (0 when ``reps == 1``).
    """
    if reps < 1:
        raise ValueError("need at least one repetition")
    cfg = cfg or OptimizerConfig()
    raw = []
    for (w, h) in sizes:
        for r in range(reps):
            req = SynthesisRequest(exemplar, view, w, h, cfg, levels, seed + r)
            for row in compare_modes(req, modes):
                raw.append(row)
                if progress:
                    progress(row)
    summary = []
    for (w, h) in sizes:
        for m in modes:
            name = m if isinstance(m, str) else m.name
            cell = [r for r in raw if r["mode"] == name and (r["width"], r["height"]) == (w, h)]
            times = [r["wall_millis"] for r in cell]
            summary.append({
                "size": f"{w}x{h}", "mode": name, "reps": len(cell),
                "mean_millis": statistics.fmean(times),
                "std_millis": statistics.stdev(times) if len(times) > 1 else 0.0,
                "mean_part2_millis": statistics.fmean(r["part2_millis"] for r in cell),
                "mean_nn_calls": statistics.fmean(r["nn_calls"] for r in cell),
                "mean_final_energy": statistics.fmean(r["final_energy"] for r in cell),
            })
    return summary, raw
