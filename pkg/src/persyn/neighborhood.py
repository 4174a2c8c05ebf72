"""Window extraction on a sparse grid and patch scheduling.

Windows are addressed by their lower-left ``anchor``; a window of width ``w``
anchored at ``a`` spans pixels ``a .. a + w - 1`` on each axis.  Anchors are
indexed in row-major order (``y`` outer, ``x`` inner).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateSizeError, ShapeError
from .image_core import PixelCoord, RgbsImage


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    nbhd_width: int = 8
    spacing: int = 2

    def __post_init__(self):
        if self.nbhd_width < 2:
            raise ValueError(f"neighborhood width must be >= 2, got {self.nbhd_width}")
        if not (1 <= self.spacing <= self.nbhd_width):
            raise ValueError(f"spacing must be in [1, {self.nbhd_width}], got {self.spacing}")

    @cached_property
    def x_positions(self) -> np.ndarray:
        return axis_anchors(self.width, self.nbhd_width, self.spacing)

    @cached_property
    def y_positions(self) -> np.ndarray:
        return axis_anchors(self.height, self.nbhd_width, self.spacing)

    @cached_property
    def anchor_xy(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat ``(xs, ys)`` anchor arrays in row-major order."""
        ys, xs = np.meshgrid(self.y_positions, self.x_positions, indexing="ij")
        return xs.ravel(), ys.ravel()

    @property
    def n_anchors(self) -> int:
        return len(self.x_positions) * len(self.y_positions)


@dataclass(frozen=True)
class PatchSpec:
    patch_width: int = 2

    def __post_init__(self):
        if self.patch_width < 1:
            raise ValueError(f"patch width must be >= 1, got {self.patch_width}")


@dataclass(frozen=True, eq=False)
class NeighborhoodMatrix:
    vectors: np.ndarray  # (n, w*w*channels)
    anchors: list[PixelCoord]
    nbhd_width: int
    n_channels: int


def axis_anchors(dim: int, w: int, spacing: int) -> np.ndarray:
    if dim < w:
        raise DegenerateSizeError(f"image extent {dim} is smaller than the {w}-pixel window")
    pos = list(range(0, dim - w + 1, spacing))
    if pos[-1] != dim - w:
        pos.append(dim - w)
    return np.asarray(pos, dtype=np.intp)


def sparse_grid_anchors(grid: GridSpec) -> list[PixelCoord]:
    xs, ys = grid.anchor_xy
    return [PixelCoord(int(x), int(y)) for x, y in zip(xs, ys)]


def window_view(arr: np.ndarray, w: int) -> np.ndarray:
    """``(h-w+1, w-w+1, w, w, c)`` read-only view of every window."""
    v = sliding_window_view(arr, (w, w), axis=(0, 1))  # (..., c, w, w)
    return v.transpose(0, 1, 3, 4, 2)


def gather_windows(arr: np.ndarray, xs, ys, w: int) -> np.ndarray:
    """Vectorized windows anchored at ``(xs, ys)``: pixels row-major, channels innermost."""
    win = window_view(arr, w)[np.asarray(ys), np.asarray(xs)]
    return win.reshape(len(win), -1)


def extract_all(img: RgbsImage | np.ndarray, grid: GridSpec) -> NeighborhoodMatrix:
    arr = img.stack() if isinstance(img, RgbsImage) else np.asarray(img, dtype=np.float64)
    if arr.shape[:2] != (grid.height, grid.width):
        raise ShapeError(
            f"grid is {grid.width}x{grid.height} but image is {arr.shape[1]}x{arr.shape[0]}")
    xs, ys = grid.anchor_xy
    vecs = gather_windows(arr, xs, ys, grid.nbhd_width)
    return NeighborhoodMatrix(vecs, sparse_grid_anchors(grid), grid.nbhd_width, arr.shape[2])


def _axis_containing(positions: np.ndarray, start: int, size: int, w: int) -> np.ndarray:
    lo = np.searchsorted(positions, start + size - w, side="left")
    hi = np.searchsorted(positions, start, side="right")
    return np.arange(lo, hi)


def containing_anchors(origin: PixelCoord, size: int, grid: GridSpec) -> list[int]:
    """Indices of the grid windows that wholly contain the ``size``-square at ``origin``."""
    w = grid.nbhd_width
    ix = _axis_containing(grid.x_positions, origin.x, size, w)
    iy = _axis_containing(grid.y_positions, origin.y, size, w)
    nx = len(grid.x_positions)
    return [int(j * nx + i) for j in iy for i in ix]


def covering_anchors(origin: PixelCoord, size: int, grid: GridSpec) -> list[int]:
    """Indices of the grid windows that overlap the ``size``-square at ``origin``."""
    w = grid.nbhd_width
    xp, yp = grid.x_positions, grid.y_positions
    ix = np.flatnonzero((xp <= origin.x + size - 1) & (xp + w > origin.x))
    iy = np.flatnonzero((yp <= origin.y + size - 1) & (yp + w > origin.y))
    nx = len(xp)
    return [int(j * nx + i) for j in iy for i in ix]


def _axis_tiles(dim: int, p: int, offset: int) -> list[int]:
    if dim < p:
        raise DegenerateSizeError(f"extent {dim} is smaller than the {p}-pixel patch")
    starts = [0] if offset else []
    starts += list(range(offset, dim - p + 1, p))
    if starts[-1] + p < dim:
        starts.append(dim - p)
    return sorted(set(starts))


def patch_tiles(width: int, height: int, patch: PatchSpec, offset: int = 0) -> list[PixelCoord]:
    """Row-major tile origins covering a ``width x height`` image.

    ``offset`` shifts the tiling phase; the leading and trailing tiles are
    clamped inward, which is the only place tiles overlap.
    """
    p = patch.patch_width
    if not (0 <= offset < p):
        raise ValueError(f"offset must be in [0, {p}), got {offset}")
    xs = _axis_tiles(width, p, offset)
    ys = _axis_tiles(height, p, offset)
    return [PixelCoord(x, y) for y in ys for x in xs]


def centered_tile_offset(grid: GridSpec, patch: PatchSpec) -> int:
    """Tiling phase that puts patches at the centre of grid windows.

    With ``w = 8``, spacing 2 and 2x2 patches this is 1, and an interior patch
    is then wholly contained in 9 windows instead of 16.
    """
    p = patch.patch_width
    return ((grid.nbhd_width - p) // 2) % grid.spacing % p
