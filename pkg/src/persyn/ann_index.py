"""Nearest-neighbour search over exemplar windows.

PCA compresses window vectors to the fewest components that keep a target
fraction of the variance; a recursive k-means tree over the compressed points
then answers queries in one of three modes:

``greedy``
    follow the nearest child centroid to a single leaf.
``backtrack``
    best-first over unvisited subtrees keyed by centroid distance, stopping
    after ``max_leaves`` leaves.
``exact``
    best-first with ball lower bounds; returns the true nearest point.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._treekernels import BACKTRACK, EXACT, GREEDY, query_batch
from .errors import DomainError, ShapeError

_MODES = {"greedy": GREEDY, "backtrack": BACKTRACK, "exact": EXACT}


# ---------------------------------------------------------------- PCA

@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray  # (D,)
    components: np.ndarray  # (D, D) rows are orthonormal, descending variance
    variances: np.ndarray  # (D,)
    retained_dim: int
    variance_target: float

    @property
    def basis(self) -> np.ndarray:
        return self.components[: self.retained_dim]

    @property
    def retained_ratio(self) -> float:
        total = self.variances.sum()
        if total <= 0:
            return 1.0
        return float(self.variances[: self.retained_dim].sum() / total)


def fit_pca(points, variance_target: float = 0.95) -> PcaModel:
    X = np.asarray(getattr(points, "vectors", points), dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ShapeError(f"PCA needs at least two row vectors, got shape {X.shape}")
    if not (0.0 < variance_target <= 1.0):
        raise ValueError(f"variance target must be in (0, 1], got {variance_target}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T
    # deterministic signs: largest-magnitude entry of each component positive
    pivots = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(len(comps)), pivots])
    signs[signs == 0] = 1.0
    comps = comps * signs[:, None]

    total = evals.sum()
    if total <= 0.0:
        d = 0
    else:
        cum = np.cumsum(evals) / total
        d = int(np.searchsorted(cum, variance_target - 1e-12, side="left")) + 1
        d = min(d, len(evals))
    return PcaModel(mean, comps, evals, d, variance_target)


def project(model: PcaModel, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != model.mean.shape[0]:
        raise ShapeError(f"vector has dim {v.shape[-1]}, model expects {model.mean.shape[0]}")
    return (v - model.mean) @ model.basis.T


def reconstruct(model: PcaModel, coords) -> np.ndarray:
    return np.asarray(coords) @ model.basis + model.mean


def reconstruction_variance_ratio(model: PcaModel, points) -> float:
    """Fraction of total variance reproduced by projecting and reconstructing."""
    X = np.asarray(getattr(points, "vectors", points), dtype=np.float64)
    Xc = X - model.mean
    total = np.sum(Xc**2)
    if total == 0.0:
        return 1.0
    resid = X - reconstruct(model, project(model, X))
    return float(1.0 - np.sum(resid**2) / total)


# ---------------------------------------------------------------- brute force

def brute_force_nearest(points, q) -> int:
    P = np.asarray(points, dtype=np.float64)
    if P.shape[0] == 0:
        raise DomainError("cannot search an empty point set")
    d2 = np.sum((P - np.asarray(q, dtype=np.float64)) ** 2, axis=1)
    return int(np.argmin(d2))


def brute_force_many(points: np.ndarray, queries: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Batched nearest neighbours by the norm expansion; ties go to the lowest index."""
    P = np.asarray(points, dtype=np.float64)
    if P.shape[0] == 0:
        raise DomainError("cannot search an empty point set")
    Q = np.asarray(queries, dtype=np.float64)
    pn = np.einsum("ij,ij->i", P, P)
    out = np.empty(len(Q), dtype=np.intp)
    for s in range(0, len(Q), chunk):
        q = Q[s:s + chunk]
        d2 = pn[None, :] - 2.0 * (q @ P.T)
        out[s:s + chunk] = np.argmin(d2, axis=1)
    return out


# ---------------------------------------------------------------- k-means tree

@dataclass(frozen=True)
class QueryBudget:
    mode: str = "backtrack"
    max_leaves: int = 4

    def __post_init__(self):
        if self.mode not in ("greedy", "backtrack", "exact"):
            raise ValueError(f"unknown query mode {self.mode!r}")
        if self.max_leaves < 1:
            raise ValueError("max_leaves must be >= 1")


@dataclass
class QueryStats:
    queries: int = 0
    nodes: int = 0
    leaves: int = 0
    points_scanned: int = 0

    def merge(self, other: "QueryStats") -> None:
        self.queries += other.queries
        self.nodes += other.nodes
        self.leaves += other.leaves
        self.points_scanned += other.points_scanned


def _sqdist(X, C):
    return np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=2)


def _kmeans_pp(X, k, rng):
    m = len(X)
    centers = [X[rng.integers(m)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    while len(centers) < k:
        total = d2.sum()
        if total <= 0.0:
            break
        idx = rng.choice(m, p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _kmeans(X, k, rng, max_sweeps=20, tol=1e-6):
    centers = _kmeans_pp(X, k, rng)
    for _ in range(max_sweeps):
        labels = np.argmin(_sqdist(X, centers), axis=1)
        keep = [c for c in range(len(centers)) if np.any(labels == c)]
        new = np.array([X[labels == c].mean(axis=0) for c in keep])
        move = np.max(np.sqrt(np.sum((new - centers[keep]) ** 2, axis=1)))
        centers = new
        if move < tol:
            break
    labels = np.argmin(_sqdist(X, centers), axis=1)
    return labels, len(centers)


class KmTree:
    """Recursive k-means tree over a fixed point matrix.

    Nodes are stored in flat lists; ``children[n]`` is ``None`` for a leaf,
    whose point indices (ascending) live in ``leaf_points[n]``.
    """

    def __init__(self, points: np.ndarray, k: int = 4, leaf_threshold: int | None = None,
                 seed: int = 0):
        P = np.asarray(points, dtype=np.float64)
        if P.ndim != 2 or len(P) == 0:
            raise DomainError("cannot build a tree over an empty point set")
        if k < 2:
            raise ValueError("branching factor must be >= 2")
        self.points = P
        self.k = k
        self.leaf_threshold = k if leaf_threshold is None else leaf_threshold
        self.centroids: list[np.ndarray] = []
        self.radii: list[float] = []
        self.children: list[np.ndarray | None] = []
        self.child_centroids: list[np.ndarray | None] = []
        self.child_radii: list[np.ndarray | None] = []
        self.leaf_points: list[np.ndarray | None] = []
        self.depth = 0
        self._build(np.random.default_rng(seed))
        self._flatten()

    def _new_node(self, idx, depth):
        c = self.points[idx].mean(axis=0)
        r = float(np.sqrt(np.max(np.sum((self.points[idx] - c) ** 2, axis=1))))
        self.centroids.append(c)
        self.radii.append(r)
        self.children.append(None)
        self.child_centroids.append(None)
        self.child_radii.append(None)
        self.leaf_points.append(np.sort(idx))
        self.depth = max(self.depth, depth)
        return len(self.centroids) - 1

    def _build(self, rng):
        root = self._new_node(np.arange(len(self.points)), 0)
        stack = [(root, 0)]
        while stack:
            node, depth = stack.pop()
            idx = self.leaf_points[node]
            if len(idx) < self.leaf_threshold:
                continue
            labels, n_clusters = _kmeans(self.points[idx], self.k, rng)
            if n_clusters < 2:
                continue  # no-split fallback: node stays a leaf
            kids = [self._new_node(idx[labels == c], depth + 1) for c in range(n_clusters)]
            self.children[node] = np.array(kids)
            self.child_centroids[node] = np.array([self.centroids[c] for c in kids])
            self.child_radii[node] = np.array([self.radii[c] for c in kids])
            self.leaf_points[node] = None
            # push in reverse so the first child is built first (fixed rng order)
            stack.extend((c, depth + 1) for c in reversed(kids))

    @property
    def n_nodes(self) -> int:
        return len(self.centroids)

    def leaves(self) -> list[np.ndarray]:
        return [p for p in self.leaf_points if p is not None]

    def structure(self) -> dict:
        """Nested sizes, without centroids; handy as a JSON debug dump."""
        def rec(n):
            if self.children[n] is None:
                return {"size": len(self.leaf_points[n])}
            kids = [rec(int(c)) for c in self.children[n]]
            return {"size": sum(k["size"] for k in kids), "children": kids}
        return rec(0)

    def dump_json(self) -> str:
        return json.dumps({"k": self.k, "depth": self.depth, "root": self.structure()})

    def _flatten(self):
        kids = [c if c is not None else np.empty(0, np.intp) for c in self.children]
        leaves = [p if p is not None else np.empty(0, np.intp) for p in self.leaf_points]
        self._child_count = np.array([len(c) for c in kids], dtype=np.int64)
        self._child_start = np.concatenate([[0], np.cumsum(self._child_count)[:-1]]).astype(np.int64)
        self._child_list = np.concatenate(kids).astype(np.int64)
        self._leaf_count = np.array([len(p) for p in leaves], dtype=np.int64)
        self._leaf_start = np.concatenate([[0], np.cumsum(self._leaf_count)[:-1]]).astype(np.int64)
        self._leaf_idx = np.concatenate(leaves).astype(np.int64)
        self._centroids = np.ascontiguousarray(self.centroids, dtype=np.float64)
        self._radii = np.asarray(self.radii, dtype=np.float64)

    def query_many(self, Q, budget: QueryBudget = QueryBudget(),
                   stats: QueryStats | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Answer every row of ``Q``; returns ``(indices, squared distances)``."""
        Q = np.ascontiguousarray(Q, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[1] != self.points.shape[1]:
            raise ShapeError(f"queries have shape {Q.shape}, tree holds dim {self.points.shape[1]}")
        out_idx = np.empty(len(Q), dtype=np.int64)
        out_d2 = np.empty(len(Q), dtype=np.float64)
        counters = np.zeros(3, dtype=np.int64)
        query_batch(Q, self.points, self._centroids, self._radii, self._child_start,
                    self._child_count, self._child_list, self._leaf_start, self._leaf_count,
                    self._leaf_idx, _MODES[budget.mode], budget.max_leaves, out_idx, out_d2,
                    counters)
        if stats is not None:
            stats.queries += len(Q)
            stats.nodes += int(counters[0])
            stats.leaves += int(counters[1])
            stats.points_scanned += int(counters[2])
        return out_idx, out_d2

    def query(self, q, budget: QueryBudget = QueryBudget(), stats: QueryStats | None = None):
        """Return ``(index, squared distance)`` for a single query vector."""
        q = np.asarray(q, dtype=np.float64)
        if q.shape != (self.points.shape[1],):
            raise ShapeError(f"query has shape {q.shape}, tree holds dim {self.points.shape[1]}")
        idx, d2 = self.query_many(q[None, :], budget, stats)
        return int(idx[0]), float(d2[0])


# ---------------------------------------------------------------- search facade

def _env_threads() -> int:
    try:
        return max(1, int(os.environ.get("PERSYN_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class NeighborhoodIndex:
    """Search structure over a fixed matrix of exemplar window vectors.

    ``method='tree'`` uses the k-means tree; ``method='brute'`` scans every
    point.  Either can run on PCA-compressed or full-dimension vectors.
    """

    vectors: np.ndarray
    use_pca: bool = True
    variance_target: float = 0.95
    method: str = "tree"
    budget: QueryBudget = field(default_factory=QueryBudget)
    k: int = 4
    leaf_threshold: int | None = None
    seed: int = 0
    threads: int | None = None

    def __post_init__(self):
        if self.method not in ("tree", "brute"):
            raise ValueError(f"unknown search method {self.method!r}")
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.pca = fit_pca(self.vectors, self.variance_target) if self.use_pca else None
        self.points = project(self.pca, self.vectors) if self.pca else self.vectors
        self.tree = (KmTree(self.points, self.k, self.leaf_threshold, self.seed)
                     if self.method == "tree" else None)
        if self.threads is None:
            self.threads = _env_threads()

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def _query_chunk(self, Q):
        stats = QueryStats()
        if self.tree is None:
            stats.queries = len(Q)
            stats.points_scanned = len(Q) * len(self.points)
            return brute_force_many(self.points, Q), stats
        return self.tree.query_many(Q, self.budget, stats)[0], stats

    def query_many(self, queries: np.ndarray) -> tuple[np.ndarray, QueryStats]:
        """Nearest exemplar window index for each full-dimension query row."""
        Q = np.asarray(queries, dtype=np.float64)
        Q = project(self.pca, Q) if self.pca else Q
        if self.threads <= 1 or len(Q) < 64:
            return self._query_chunk(Q)
        parts = np.array_split(Q, self.threads)
        with ThreadPoolExecutor(self.threads) as pool:
            results = list(pool.map(self._query_chunk, parts))
        stats = QueryStats()
        for _, s in results:
            stats.merge(s)
        return np.concatenate([r for r, _ in results]), stats
