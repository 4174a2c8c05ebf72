"""Perspective scale maps from user-supplied slant and tilt angles.

The apparent texel size on a planar surface viewed at slant ``sigma`` varies
linearly along the tilt direction ``(sin tau, cos tau)`` between
``1/cos(sigma)`` (nearest the origin corner) and ``cos(sigma)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, FormatError, ShapeError
from .image_core import PixelCoord, _atomic_write

MAGIC = b"PSM1\n"


@dataclass(frozen=True)
class ViewAngles:
    sigma: float  # slant, degrees
    tau: float  # tilt, degrees

    def __post_init__(self):
        if not (0.0 <= self.sigma < 90.0):
            raise DomainError(f"slant must be in [0, 90) degrees, got {self.sigma}")
        if not (0.0 <= self.tau < 360.0):
            raise DomainError(f"tilt must be in [0, 360) degrees, got {self.tau}")
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "tau", float(self.tau))

    @property
    def direction(self) -> tuple[float, float]:
        """Unit tilt direction ``(dx, dy)`` in bottom-left image coordinates."""
        t = math.radians(self.tau)
        return math.sin(t), math.cos(t)


@dataclass(frozen=True)
class ScaleBounds:
    s_max: float
    s_min: float
    s_delta: float


@dataclass(frozen=True)
class ProjectionRange:
    y_max: float
    y_min: float
    y_delta: float


@dataclass(frozen=True, eq=False)
class ScaleMap:
    width: int
    height: int
    values: np.ndarray = field(repr=False)  # (height, width), row 0 at the bottom
    view: ViewAngles
    bounds: ScaleBounds

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.height, self.width):
            raise ShapeError(f"values shape {v.shape} does not match {self.width}x{self.height}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def scale_bounds(view: ViewAngles) -> ScaleBounds:
    if not (0.0 <= view.sigma < 90.0):
        raise DomainError(f"slant must be in [0, 90) degrees, got {view.sigma}")
    c = math.cos(math.radians(view.sigma))
    s_max, s_min = 1.0 / c, c
    return ScaleBounds(s_max, s_min, s_max - s_min)


def projection_range(w: int, h: int, tau: float) -> ProjectionRange:
    """Extent of projected coordinates along the tilt direction.

    Each term is taken in absolute value so the range stays non-negative
    for tilts outside the first quadrant.
    """
    t = math.radians(tau)
    y_max = abs((w - 1 - w / 2) * math.sin(t)) + abs((h - 1 - h / 2) * math.cos(t))
    return ProjectionRange(y_max, -y_max, 2 * y_max)


def _projected(x, y, w: int, h: int, tau: float):
    t = math.radians(tau)
    return (x - w / 2) * math.sin(t) + (y - h / 2) * math.cos(t)


def local_scale(p: PixelCoord, view: ViewAngles, w: int, h: int) -> float:
    """Unclamped scale at pixel ``p``; may overshoot the bounds at corners."""
    if not (0 <= p.x < w and 0 <= p.y < h):
        raise DomainError(f"pixel ({p.x}, {p.y}) outside {w}x{h} image")
    b = scale_bounds(view)
    pr = projection_range(w, h, view.tau)
    if b.s_delta == 0.0 or pr.y_delta == 0.0:
        return b.s_max
    y_proj = _projected(p.x, p.y, w, h, view.tau)
    return b.s_max - (y_proj - pr.y_min) * b.s_delta / pr.y_delta


def compute_scale_map(w: int, h: int, view: ViewAngles) -> ScaleMap:
    if w < 1 or h < 1:
        raise DomainError(f"scale map needs positive dimensions, got {w}x{h}")
    b = scale_bounds(view)
    pr = projection_range(w, h, view.tau)
    if b.s_delta == 0.0 or pr.y_delta == 0.0:
        values = np.full((h, w), b.s_max)
    else:
        y, x = np.mgrid[0:h, 0:w].astype(np.float64)
        y_proj = _projected(x, y, w, h, view.tau)
        values = b.s_max - (y_proj - pr.y_min) * b.s_delta / pr.y_delta
        values = np.clip(values, b.s_min, b.s_max)
    return ScaleMap(w, h, values, view, b)


def save_scale_map(smap: ScaleMap, path) -> None:
    header = {
        "width": smap.width,
        "height": smap.height,
        "sigma": smap.view.sigma,
        "tau": smap.view.tau,
        "smin": smap.bounds.s_min,
        "smax": smap.bounds.s_max,
    }
    payload = np.ascontiguousarray(smap.values, dtype="<f4").tobytes()
    blob = MAGIC + json.dumps(header, separators=(",", ":")).encode() + b"\n" + payload
    _atomic_write(Path(path), lambda fh: fh.write(blob))


def load_scale_map(path) -> ScaleMap:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise FormatError(f"{path}: missing PSM1 magic")
    nl = data.find(b"\n", len(MAGIC))
    if nl < 0:
        raise FormatError(f"{path}: truncated header")
    try:
        hdr = json.loads(data[len(MAGIC):nl])
        w, h = int(hdr["width"]), int(hdr["height"])
        view = ViewAngles(float(hdr["sigma"]), float(hdr["tau"]))
        s_min, s_max = float(hdr["smin"]), float(hdr["smax"])
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed header ({exc})") from exc
    payload = data[nl + 1:]
    if w < 1 or h < 1 or len(payload) != 4 * w * h:
        raise FormatError(
            f"{path}: header says {w}x{h} but payload holds {len(payload)} bytes")
    values = np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float64)
    return ScaleMap(w, h, values, view, ScaleBounds(s_max, s_min, s_max - s_min))


