"""Robust texture-energy optimization.

The output ``X`` is refined by alternating two phases until the nearest
exemplar windows stop changing:

* search: visit the output in small tiles; for each tile, look up the nearest
  exemplar window for every grid window that wholly contains it, then refit
  the tile's pixels before moving on;
* update: with assignments and IRLS weights fixed, set every pixel to the
  weighted mean of the exemplar samples that cover it, which is the exact
  minimizer of the weighted quadratic energy.

Weights follow ``W = (d**2 + eps) ** ((r - 2) / 2)`` and are optionally
divided by ``1 + penalty`` where the penalty measures how much the colours of
an exemplar window are already over-represented in the output histogram.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._treekernels import splat
from .ann_index import NeighborhoodIndex, QueryBudget
from .errors import DegenerateSizeError, ShapeError
from .image_core import RgbsImage
from .neighborhood import (GridSpec, PatchSpec, centered_tile_offset, containing_anchors,
                           gather_windows, patch_tiles)


@dataclass(frozen=True)
class OptimizerConfig:
    r: float = 0.8
    epsilon: float = 1e-4
    max_iterations: int = 20
    convergence_fraction: float = 0.01
    histogram_matching: bool = True
    histogram_bins: int = 16
    histogram_channels: tuple[int, ...] = (0, 1, 2)
    nbhd_width: int = 8
    spacing: int = 2
    patch: PatchSpec = field(default_factory=PatchSpec)
    search: str = "tree"
    use_pca: bool = True
    variance_target: float = 0.95
    budget: QueryBudget = field(default_factory=QueryBudget)
    tree_k: int = 4
    pin_scale: bool = True
    seed: int = 0
    threads: int | None = None

    def __post_init__(self):
        if not (0.0 < self.r < 2.0):
            raise ValueError(f"robust exponent must be in (0, 2), got {self.r}")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if not (0.0 < self.convergence_fraction < 1.0):
            raise ValueError("convergence fraction must be in (0, 1)")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.histogram_bins < 2:
            raise ValueError("need at least two histogram bins")
        if self.patch.patch_width > self.spacing:
            raise ValueError("patch width may not exceed the grid spacing")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class AssignmentMap:
    indices: np.ndarray  # exemplar window per output grid window
    distances: np.ndarray  # full-dimension distance at assignment time


@dataclass(eq=False)
class WeightMap:
    irls: np.ndarray
    hist_penalty: np.ndarray

    @property
    def effective(self) -> np.ndarray:
        return self.irls / (1.0 + self.hist_penalty)


@dataclass
class IterationRecord:
    iter: int
    energy: float
    changed: int
    nn_calls: int
    millis: float
    weighted_before: float = float("nan")
    weighted_after: float = float("nan")


@dataclass
class EnergyTrace:
    records: list[IterationRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def energies(self) -> list[float]:
        return [r.energy for r in self.records]

    @property
    def nn_calls(self) -> int:
        return sum(r.nn_calls for r in self.records)

    def to_dicts(self, timing: bool = True) -> list[dict]:
        keys = ("iter", "energy", "changed", "nn_calls") + (("millis",) if timing else ())
        return [{k: getattr(r, k) for k in keys} for r in self.records]

    def to_jsonl(self, timing: bool = True) -> str:
        return "".join(json.dumps(d) + "\n" for d in self.to_dicts(timing))


# ---------------------------------------------------------------- energies and weights

def texture_energy(x_vectors, z_vectors, r: float) -> float:
    """Robust energy: sum over windows of ``||x_p - z_p|| ** r``."""
    d = np.linalg.norm(np.asarray(x_vectors) - np.asarray(z_vectors), axis=-1)
    return float(np.sum(d**r))


def weighted_energy(x_vectors, z_vectors, weights) -> float:
    """Quadratic surrogate: sum of ``W_p * ||x_p - z_p|| ** 2``."""
    d2 = np.sum((np.asarray(x_vectors) - np.asarray(z_vectors)) ** 2, axis=-1)
    return float(np.sum(np.asarray(weights) * d2))


def irls_weight(distance, r: float, epsilon: float):
    d = np.asarray(distance, dtype=np.float64)
    w = (d * d + epsilon) ** ((r - 2.0) / 2.0)
    return float(w) if w.ndim == 0 else w


# ---------------------------------------------------------------- histograms

@dataclass(frozen=True, eq=False)
class HistogramSet:
    hists: np.ndarray  # (channels, bins), rows sum to 1

    @property
    def bins(self) -> int:
        return self.hists.shape[1]

    def bin_index(self, values) -> np.ndarray:
        return np.clip(np.floor(np.asarray(values) * self.bins).astype(np.intp), 0, self.bins - 1)


def build_histograms(channels, bins: int = 16) -> HistogramSet:
    """Normalized per-channel histograms; ``channels`` is ``(..., C)``."""
    if bins < 2:
        raise ValueError("need at least two bins")
    vals = np.asarray(channels, dtype=np.float64)
    vals = vals.reshape(-1, vals.shape[-1])
    idx = np.clip(np.floor(vals * bins).astype(np.intp), 0, bins - 1)
    hists = np.stack([np.bincount(idx[:, j], minlength=bins) for j in range(vals.shape[1])])
    return HistogramSet(hists / len(vals))


def pixel_penalties(pixels, H_x: HistogramSet, H_z: HistogramSet) -> np.ndarray:
    """Per-pixel sum over channels of the output's excess mass in that pixel's bin."""
    if H_x.hists.shape != H_z.hists.shape:
        raise ShapeError("histogram sets differ in shape")
    px = np.asarray(pixels, dtype=np.float64)
    b = H_x.bin_index(px)
    excess = np.clip(H_x.hists - H_z.hists, 0.0, None)
    return sum(excess[j][b[..., j]] for j in range(px.shape[-1]))


def histogram_penalty(nbhd_pixels, H_x: HistogramSet, H_z: HistogramSet) -> float:
    """Mean pixel penalty over one neighbourhood given as ``(n_pixels, C)``."""
    return float(np.mean(pixel_penalties(np.asarray(nbhd_pixels).reshape(-1, H_x.hists.shape[0]),
                                         H_x, H_z)))


def window_penalties(image: np.ndarray, channels, H_x, H_z, w: int, xs, ys) -> np.ndarray:
    """``histogram_penalty`` for every ``w x w`` window anchored at ``(xs, ys)``."""
    pp = pixel_penalties(image[:, :, list(channels)], H_x, H_z)
    means = sliding_window_view(pp, (w, w)).mean(axis=(2, 3))
    return means[ys, xs]


# ---------------------------------------------------------------- update

def _splat(num, den, xs, ys, vecs, eff):
    w = int(round(np.sqrt(vecs.shape[1] // num.shape[2])))
    splat(num, den, np.ascontiguousarray(xs, dtype=np.int64), np.ascontiguousarray(ys, dtype=np.int64),
          np.ascontiguousarray(vecs, dtype=np.float64), np.ascontiguousarray(eff, dtype=np.float64), w)


def update_step(assignments, weights, grid: GridSpec, z_vectors, n_channels: int = 4):
    """Closed-form minimizer of the weighted quadratic energy.

    Each pixel becomes ``sum(W_p * z_p[pixel]) / sum(W_p)`` over the grid
    windows covering it.  Contributions are accumulated in ascending window
    order, so the result is bit-reproducible.
    """
    idx = getattr(assignments, "indices", assignments)
    eff = getattr(weights, "effective", weights)
    eff = np.asarray(eff, dtype=np.float64)
    if not np.all(np.isfinite(eff)) or np.any(eff <= 0):
        raise ValueError("weights must be finite and positive")
    num = np.zeros((grid.height, grid.width, n_channels))
    den = np.zeros((grid.height, grid.width))
    xs, ys = grid.anchor_xy
    _splat(num, den, xs, ys, np.asarray(z_vectors)[idx], eff)
    if np.any(den <= 0):
        raise RuntimeError("output pixel not covered by any grid window")
    return num / den[:, :, None]


# ---------------------------------------------------------------- search

def tile_batches(grid: GridSpec, patch: PatchSpec) -> list[dict]:
    """Group tiles into batches of mutually independent tiles.

    Two tiles interact only if one lies inside a window containing the other,
    so tiles whose origins are at least ``w + patch`` apart on some axis can be
    processed together.  Batches are visited colour by colour; the result is
    identical to visiting the tiles one at a time in that order.
    """
    p = patch.patch_width
    w = grid.nbhd_width
    tiles = patch_tiles(grid.width, grid.height, patch, centered_tile_offset(grid, patch))
    xs = sorted({t.x for t in tiles})
    ys = sorted({t.y for t in tiles})
    col = {x: i for i, x in enumerate(xs)}
    row = {y: i for i, y in enumerate(ys)}
    period = -(-(w + p) // p) + 2
    groups: dict[tuple[int, int], list] = {}
    for t in tiles:
        groups.setdefault((row[t.y] % period, col[t.x] % period), []).append(t)
    batches = []
    oy, ox = np.mgrid[0:p, 0:p]
    for key in sorted(groups):
        ts = groups[key]
        anchors = [containing_anchors(t, p, grid) for t in ts]
        batches.append({
            "tiles": ts,
            "anchors": np.concatenate([np.asarray(a, dtype=np.intp) for a in anchors]),
            "per_tile": [len(a) for a in anchors],
            "pix_x": np.concatenate([t.x + ox.ravel() for t in ts]),
            "pix_y": np.concatenate([t.y + oy.ravel() for t in ts]),
        })
    return batches


class LevelProblem:
    """Fixed data for optimizing one pyramid level."""

    def __init__(self, exemplar: RgbsImage, index: NeighborhoodIndex, out_width: int,
                 out_height: int, cfg: OptimizerConfig):
        w = cfg.nbhd_width
        if min(out_width, out_height, exemplar.width, exemplar.height) < w:
            raise DegenerateSizeError(f"images must be at least {w}x{w}")
        self.cfg = cfg
        self.w = w
        self.grid = GridSpec(out_width, out_height, w, cfg.spacing)
        self.in_grid = GridSpec(exemplar.width, exemplar.height, w, 1)
        self.exemplar = exemplar.stack()
        self.index = index
        self.z = index.vectors
        if self.z.shape[0] != self.in_grid.n_anchors:
            raise ShapeError("index does not hold every exemplar window")
        self.n_channels = self.exemplar.shape[2]
        self.batches = tile_batches(self.grid, cfg.patch)
        self.hist_channels = list(cfg.histogram_channels)
        self.H_z = build_histograms(self.exemplar[:, :, self.hist_channels], cfg.histogram_bins)

    def windows(self, X, ids=None) -> np.ndarray:
        xs, ys = self.grid.anchor_xy
        if ids is not None:
            xs, ys = xs[ids], ys[ids]
        return gather_windows(X, xs, ys, self.w)

    def input_penalties(self, X) -> np.ndarray:
        if not self.cfg.histogram_matching:
            return np.zeros(len(self.z))
        H_x = build_histograms(X[:, :, self.hist_channels], self.cfg.histogram_bins)
        xs, ys = self.in_grid.anchor_xy
        return window_penalties(self.exemplar, self.hist_channels, H_x, self.H_z, self.w, xs, ys)

    def weights(self, X, idx, pen_in) -> tuple[np.ndarray, WeightMap]:
        d = np.linalg.norm(self.windows(X) - self.z[idx], axis=1)
        return d, WeightMap(irls_weight(d, self.cfg.r, self.cfg.epsilon), pen_in[idx])


def search_step(X: np.ndarray, prob: LevelProblem, prior: AssignmentMap | None = None,
                pen_in: np.ndarray | None = None):
    """One tile-by-tile search pass.

    Returns ``(X', assignments, nn_calls)``.  Every tile queries the windows
    that wholly contain it against the current output, keeps a new exemplar
    window only if it is strictly closer than the current one, and then
    refits its own pixels from all windows covering them.
    """
    cfg = prob.cfg
    X = np.array(X, dtype=np.float64, copy=True)
    n = prob.grid.n_anchors
    pen_in = np.zeros(len(prob.z)) if pen_in is None else pen_in
    ax, ay = prob.grid.anchor_xy
    z = prob.z
    if prior is None:
        idx = np.full(n, -1, dtype=np.intp)
        dist = np.full(n, np.inf)
        eff = np.zeros(n)
    else:
        idx = prior.indices.copy()
        dist, wm = prob.weights(X, idx, pen_in)
        eff = wm.effective
    num = np.zeros(X.shape)
    den = np.zeros(X.shape[:2])
    have = idx >= 0
    if have.any():
        _splat(num, den, ax[have], ay[have], z[idx[have]], eff[have])
    n_ch = X.shape[2] - 1 if cfg.pin_scale else X.shape[2]
    calls = 0
    for b in prob.batches:
        A = b["anchors"]
        Q = prob.windows(X, A)
        new, _ = prob.index.query_many(Q)
        calls += len(A)
        d_new = np.linalg.norm(Q - z[new], axis=1)
        old = idx[A]
        had = old >= 0
        d_old = np.full(len(A), np.inf)
        if had.any():
            d_old[had] = np.linalg.norm(Q[had] - z[old[had]], axis=1)
        take = d_new < d_old
        chosen = np.where(take, new, old)
        d_cur = np.where(take, d_new, d_old)
        e_new = irls_weight(d_cur, cfg.r, cfg.epsilon) / (1.0 + pen_in[chosen])
        if had.any():
            _splat(num, den, ax[A[had]], ay[A[had]], z[old[had]], -eff[A[had]])
        _splat(num, den, ax[A], ay[A], z[chosen], e_new)
        idx[A] = chosen
        dist[A] = d_cur
        eff[A] = e_new
        py, px = b["pix_y"], b["pix_x"]
        X[py, px, :n_ch] = num[py, px, :n_ch] / den[py, px, None]
    np.clip(X, 0.0, 1.0, out=X)
    return X, AssignmentMap(idx, dist), calls


def optimize_level(init: RgbsImage, exemplar: RgbsImage, index: NeighborhoodIndex,
                   cfg: OptimizerConfig, init_assignments: AssignmentMap | None = None):
    """Alternate search and update until fewer than ``convergence_fraction`` of
    the assignments change (or ``max_iterations`` is hit).

    Returns ``(image, trace, assignments)``.
    """
    prob = LevelProblem(exemplar, index, init.width, init.height, cfg)
    X = init.stack()
    target_s = X[:, :, 3].copy()
    n = prob.grid.n_anchors
    trace = EnergyTrace()
    amap = init_assignments
    for it in range(1, cfg.max_iterations + 1):
        t0 = time.perf_counter()
        pen_in = prob.input_penalties(X)
        start = None if amap is None else amap.indices.copy()
        X, amap, calls = search_step(X, prob, amap, pen_in)
        d, wm = prob.weights(X, amap.indices, pen_in)
        eff = wm.effective
        zsel = prob.z[amap.indices]
        before = float(np.sum(eff * d * d))
        X_new = update_step(amap, eff, prob.grid, prob.z, X.shape[2])
        if cfg.pin_scale:
            X_new[:, :, 3] = target_s
        X = np.clip(X_new, 0.0, 1.0)
        xv = prob.windows(X)
        after = weighted_energy(xv, zsel, eff)
        amap.distances = np.linalg.norm(xv - zsel, axis=1)
        changed = n if start is None else int(np.count_nonzero(start != amap.indices))
        trace.records.append(IterationRecord(
            it, float(np.sum(amap.distances**cfg.r)), changed, calls,
            (time.perf_counter() - t0) * 1e3, before, after))
        if changed < cfg.convergence_fraction * n:
            break
    return RgbsImage.from_stack(X), trace, amap
