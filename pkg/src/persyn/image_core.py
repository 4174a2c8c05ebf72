"""Raster images, the RGB+scale channel model, file I/O and resampling.

Pixel arrays are stored as ``(height, width, channels)`` float64 with row 0
at the *bottom* of the picture, so ``pixels[y, x]`` addresses the pixel at
column ``x`` and height ``y`` above the lower-left corner.
"""
from __future__ import annotations

import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DegenerateSizeError, FormatError, ShapeError

RGB = ("R", "G", "B")
RGBS = ("R", "G", "B", "S")


@dataclass(frozen=True)
class PixelCoord:
    x: int
    y: int


@dataclass(frozen=True, eq=False)
class RasterImage:
    pixels: np.ndarray
    channels: tuple[str, ...] = RGB

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3:
            raise ShapeError(f"expected (height, width, channels) array, got shape {px.shape}")
        h, w, c = px.shape
        if h < 1 or w < 1:
            raise DegenerateSizeError(f"image must be at least 1x1, got {w}x{h}")
        if c != len(self.channels):
            raise ShapeError(f"{c} planes but {len(self.channels)} channel names")
        if tuple(self.channels[:3]) != RGB:
            raise ShapeError(f"channels must start with R, G, B, got {self.channels}")
        if not np.all(np.isfinite(px)) or px.min() < 0.0 or px.max() > 1.0:
            raise ValueError("samples must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        """``(width, height)``."""
        return self.width, self.height

    def plane(self, name: str) -> np.ndarray:
        return self.pixels[:, :, self.channels.index(name)]

    def rgb(self) -> "RasterImage":
        return RasterImage(self.pixels[:, :, :3], RGB)


@dataclass(frozen=True, eq=False)
class RgbsImage:
    """RGB image plus a normalized scale plane (the S channel)."""

    base: RasterImage
    scale_plane: np.ndarray = field(repr=False)

    def __post_init__(self):
        s = np.asarray(self.scale_plane, dtype=np.float64)
        if s.shape != (self.base.height, self.base.width):
            raise ShapeError(
                f"scale plane {s.shape[::-1]} does not match image {self.base.shape}")
        if s.min() < 0.0 or s.max() > 1.0:
            raise ValueError("scale plane must lie in [0, 1]")
        s.setflags(write=False)
        object.__setattr__(self, "scale_plane", s)

    @property
    def width(self) -> int:
        return self.base.width

    @property
    def height(self) -> int:
        return self.base.height

    def stack(self) -> np.ndarray:
        """Return a fresh ``(h, w, 4)`` array ordered R, G, B, S."""
        return np.concatenate([self.base.pixels[:, :, :3], self.scale_plane[:, :, None]], axis=2)

    @classmethod
    def from_stack(cls, arr: np.ndarray) -> "RgbsImage":
        arr = np.clip(arr, 0.0, 1.0)
        return cls(RasterImage(arr[:, :, :3]), arr[:, :, 3])


# ---------------------------------------------------------------- file I/O

_PPM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _decode_ppm(data: bytes, path) -> np.ndarray:
    pos = 0
    tokens = []
    for _ in range(4):
        m = _PPM_TOKEN.match(data, pos)
        if m is None:
            raise FormatError(f"{path}: truncated PPM header")
        tokens.append(m.group(1))
        pos = m.end()
    magic, w, h, maxval = tokens
    if magic != b"P6":
        raise FormatError(f"{path}: unsupported PPM magic {magic!r} (only binary P6)")
    try:
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise FormatError(f"{path}: malformed PPM header {tokens!r}") from None
    if maxval != 255:
        raise FormatError(f"{path}: unsupported PPM maxval {maxval} (only 8-bit, 255)")
    if w < 1 or h < 1:
        raise FormatError(f"{path}: bad PPM dimensions {w}x{h}")
    pos += 1  # single whitespace byte after maxval
    payload = data[pos:pos + w * h * 3]
    if len(payload) != w * h * 3:
        raise FormatError(f"{path}: PPM payload has {len(payload)} bytes, expected {w * h * 3}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)


def _decode_png(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.format != "PNG":
            raise FormatError(f"{path}: not a PNG or P6 PPM file (found {im.format})")
        if im.mode == "RGB":
            arr = np.asarray(im)
        elif im.mode in ("L", "P") and "transparency" not in im.info:
            arr = np.asarray(im.convert("RGB"))
        else:
            raise FormatError(f"{path}: unsupported PNG mode {im.mode!r} (need 8-bit RGB)")
    return arr


def load_image(path) -> RasterImage:
    """Read an 8-bit PNG or binary PPM into a bottom-left-origin image."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head[:1] == b"P":
        arr = _decode_ppm(path.read_bytes(), path)
    else:
        try:
            arr = _decode_png(path)
        except UnidentifiedImageError as exc:
            raise FormatError(f"{path}: not a PNG or P6 PPM file") from exc
    return RasterImage(arr[::-1].astype(np.float64) / 255.0)


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(pixels) * 255.0), 0, 255).astype(np.uint8)


def _atomic_write(path: Path, write) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_image(img: RasterImage, path) -> None:
    """Write RGB planes as PNG (``.png``) or binary PPM (anything else)."""
    path = Path(path)
    arr = to_uint8(img.pixels[::-1, :, :3])
    if path.suffix.lower() == ".png":
        _atomic_write(path, lambda fh: Image.fromarray(arr, "RGB").save(fh, format="PNG"))
    else:
        header = b"P6\n%d %d\n255\n" % (arr.shape[1], arr.shape[0])
        _atomic_write(path, lambda fh: fh.write(header + arr.tobytes()))


def save_gray_png(plane: np.ndarray, path) -> None:
    """Write a single ``[0, 1]`` plane (bottom row first) as 8-bit grayscale PNG."""
    arr = to_uint8(plane[::-1])
    _atomic_write(Path(path), lambda fh: Image.fromarray(arr, "L").save(fh, format="PNG"))


# ---------------------------------------------------------------- resampling

def downsample(img: RasterImage, factor: int) -> RasterImage:
    """Box-filter by an integer factor; trailing rows/columns are dropped."""
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    w, h = img.width // factor, img.height // factor
    if w == 0 or h == 0:
        raise DegenerateSizeError(
            f"downsampling {img.width}x{img.height} by {factor} leaves no pixels")
    px = img.pixels[:h * factor, :w * factor]
    out = px.reshape(h, factor, w, factor, -1).mean(axis=(1, 3))
    return RasterImage(np.clip(out, 0.0, 1.0), img.channels)


def _axis_weights(n_in: int, n_out: int):
    # pixel-centre aligned source coordinates, clamped to the edge
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear_array(px: np.ndarray, width: int, height: int) -> np.ndarray:
    if width < 1 or height < 1:
        raise DegenerateSizeError(f"target size {width}x{height} is empty")
    y0, y1, fy = _axis_weights(px.shape[0], height)
    x0, x1, fx = _axis_weights(px.shape[1], width)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = px[y0][:, x0] * (1 - fx) + px[y0][:, x1] * fx
    bot = px[y1][:, x0] * (1 - fx) + px[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def resize_bilinear(img: RasterImage, width: int, height: int) -> RasterImage:
    out = resize_bilinear_array(img.pixels, width, height)
    return RasterImage(np.clip(out, 0.0, 1.0), img.channels)


def upsample_bilinear(img: RasterImage, factor: int) -> RasterImage:
    if factor < 1:
        raise ValueError(f"factor must be >= 1, got {factor}")
    if factor == 1:
        return img
    return resize_bilinear(img, img.width * factor, img.height * factor)


def normalize_scale(values: np.ndarray, s_min: float, s_max: float) -> np.ndarray:
    """Map scales from ``[s_min, s_max]`` to ``[0, 1]``; degenerate range -> 0.5."""
    values = np.asarray(values, dtype=np.float64)
    if s_max > s_min:
        return np.clip((values - s_min) / (s_max - s_min), 0.0, 1.0)
    return np.full(values.shape, 0.5)


def attach_scale_channel(img: RasterImage, smap) -> RgbsImage:
    if (smap.width, smap.height) != img.shape:
        raise ShapeError(
            f"scale map {smap.width}x{smap.height} does not match image {img.width}x{img.height}")
    return RgbsImage(img.rgb(), normalize_scale(smap.values, smap.bounds.s_min, smap.bounds.s_max))
