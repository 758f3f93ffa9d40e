"""Radial distortion model and plane resampling.

The distortion polynomial maps a normalised *output* radius to the radius at
which the source plane is sampled (inverse warping). Radii are normalised by
half the image diagonal, so r = 1 at the corners of a centred image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np

from .imgio import RgbImage

BILINEAR = "bilinear"
LANCZOS3 = "lanczos3"


class Coefficients(NamedTuple):
    """r_src = a*r + b*r**2 + c*r**3 + d*r**4"""

    a: float = 1.0
    b: float = 0.0
    c: float = 0.0
    d: float = 0.0

    @classmethod
    def parse(cls, text: str) -> "Coefficients":
        parts = [p for p in text.replace(" ", "").split(",") if p]
        if len(parts) != 4:
            raise ValueError(f"expected 4 comma-separated coefficients, got {text!r}")
        return cls(*(float(p) for p in parts))


IDENTITY = Coefficients(1.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class Intrinsics:
    centre_x: float
    centre_y: float
    r_norm: float

    def __post_init__(self):
        if not self.r_norm > 0:
            raise ValueError("r_norm must be positive")

    @classmethod
    def for_shape(cls, shape, centre_x=None, centre_y=None) -> "Intrinsics":
        """Geometric centre unless offsets are given; r_norm = half diagonal."""
        h, w = shape
        cx = (w - 1) / 2.0 if centre_x is None else float(centre_x)
        cy = (h - 1) / 2.0 if centre_y is None else float(centre_y)
        return cls(cx, cy, 0.5 * math.hypot(w, h))


def radial_map(r, c: Coefficients):
    """Evaluate the distortion polynomial at normalised radius r (Horner form)."""
    a, b, cc, d = c
    return (((d * r + cc) * r + b) * r + a) * r


def radial_scale(r, c: Coefficients):
    """radial_map(r) / r, finite at r = 0 where it equals a."""
    a, b, cc, d = c
    return ((d * r + cc) * r + b) * r + a


@lru_cache(maxsize=8)
def _grid(shape: tuple[int, int], cx: float, cy: float, r_norm: float):
    h, w = shape
    dy, dx = np.meshgrid(
        np.arange(h, dtype=np.float64) - cy,
        np.arange(w, dtype=np.float64) - cx,
        indexing="ij",
    )
    r = np.sqrt(dx * dx + dy * dy) / r_norm
    for arr in (dx, dy, r):
        arr.setflags(write=False)
    return dx, dy, r


def pixel_grid(shape, intr: Intrinsics):
    """Offsets from the centre and normalised radius of every pixel (cached)."""
    return _grid(tuple(shape), intr.centre_x, intr.centre_y, intr.r_norm)


def source_coords(shape, intr: Intrinsics, scale: np.ndarray):
    dx, dy, _ = pixel_grid(shape, intr)
    return intr.centre_x + dx * scale, intr.centre_y + dy * scale


def inside(sx, sy, shape) -> np.ndarray:
    h, w = shape
    return (sx >= 0.0) & (sx <= w - 1) & (sy >= 0.0) & (sy <= h - 1)


def _bilinear(p: np.ndarray, sx, sy, valid) -> np.ndarray:
    h, w = p.shape
    fx0 = np.floor(sx)
    fy0 = np.floor(sy)
    np.clip(fx0, 0, max(w - 2, 0), out=fx0)
    np.clip(fy0, 0, max(h - 2, 0), out=fy0)
    fx = sx - fx0
    fy = sy - fy0
    fx[~valid] = 0.0
    fy[~valid] = 0.0
    x0 = fx0.astype(np.intp)
    i00 = fy0.astype(np.intp) * w + x0
    dx = 1 if w > 1 else 0
    dy = w if h > 1 else 0
    flat = p.ravel()
    p00 = flat.take(i00)
    p01 = flat.take(i00 + dx)
    p10 = flat.take(i00 + dy)
    p11 = flat.take(i00 + dy + dx)
    top = (1.0 - fx) * p00 + fx * p01
    bot = (1.0 - fx) * p10 + fx * p11
    out = (1.0 - fy) * top + fy * bot
    out[~valid] = 0.0
    return out


def _lanczos_weights(frac: np.ndarray, a: int = 3) -> np.ndarray:
    """Tap weights for offsets -a+1..a relative to floor(src), rows sum to 1."""
    offs = np.arange(-a + 1, a + 1, dtype=np.float64)
    x = frac[..., None] - offs
    wts = np.sinc(x) * np.sinc(x / a)
    wts[np.abs(x) >= a] = 0.0
    # integer source positions must reproduce the sample exactly
    exact = frac == 0.0
    if np.any(exact):
        wts[exact] = (offs == 0.0).astype(np.float64)
    return wts / wts.sum(axis=-1, keepdims=True)


def _lanczos3(p: np.ndarray, sx, sy, valid) -> np.ndarray:
    h, w = p.shape
    out = np.zeros(sx.shape, dtype=np.float64)
    sxv, syv = sx[valid], sy[valid]
    x0 = np.floor(sxv)
    y0 = np.floor(syv)
    wx = _lanczos_weights(sxv - x0)
    wy = _lanczos_weights(syv - y0)
    x0 = x0.astype(np.intp)
    y0 = y0.astype(np.intp)
    acc = np.zeros(sxv.shape, dtype=np.float64)
    for j in range(6):
        yi = np.clip(y0 + j - 2, 0, h - 1)
        row = np.zeros(sxv.shape, dtype=np.float64)
        for i in range(6):
            xi = np.clip(x0 + i - 2, 0, w - 1)
            row += wx[:, i] * p[yi, xi]
        acc += wy[:, j] * row
    out[valid] = np.clip(acc, 0.0, 1.0)
    return out


def resample(p: np.ndarray, sx, sy, interp: str = BILINEAR):
    """Gather p at (sx, sy). Returns (plane, mask); out-of-bounds reads are 0."""
    valid = inside(sx, sy, p.shape)
    if interp == BILINEAR:
        return _bilinear(p, sx, sy, valid), valid
    if interp == LANCZOS3:
        return _lanczos3(p, sx, sy, valid), valid
    raise ValueError(f"unknown interpolation {interp!r}")


def warp_radial(
    p: np.ndarray,
    scale_fn: Callable[[np.ndarray], np.ndarray],
    intr: Intrinsics,
    interp: str = BILINEAR,
):
    """Warp by an arbitrary radial scale function of normalised output radius.

    scale_fn(r) must return source_radius / r (its limit at r = 0).
    """
    p = np.asarray(p, dtype=np.float64)
    _, _, r = pixel_grid(p.shape, intr)
    sx, sy = source_coords(p.shape, intr, scale_fn(r))
    return resample(p, sx, sy, interp)


def distort_plane_masked(p, c: Coefficients, intr: Intrinsics, interp: str = BILINEAR):
    """distort_plane plus the validity mask computed from the same coordinates."""
    return warp_radial(p, lambda r: radial_scale(r, c), intr, interp)


def distort_plane(p, c: Coefficients, intr: Intrinsics, interp: str = BILINEAR) -> np.ndarray:
    return distort_plane_masked(p, c, intr, interp)[0]


def compute_mask(shape, c: Coefficients, intr: Intrinsics) -> np.ndarray:
    """True where the output pixel's source location lies inside the plane."""
    shape = tuple(shape)
    _, _, r = pixel_grid(shape, intr)
    sx, sy = source_coords(shape, intr, radial_scale(r, c))
    return inside(sx, sy, shape)


def correct_image(
    img: RgbImage,
    rg: Coefficients,
    bg: Coefficients,
    intr: Intrinsics,
    interp: str = LANCZOS3,
) -> RgbImage:
    """Warp R and B onto G. The green plane is passed through untouched."""
    r = distort_plane(img.r, Coefficients(*rg), intr, interp)
    b = distort_plane(img.b, Coefficients(*bg), intr, interp)
    return RgbImage(r, img.g, b)

