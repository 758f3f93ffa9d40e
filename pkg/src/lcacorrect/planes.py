"""Plane-level operations: Bayer simulation, equalisation, luminance, differences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import convolve, maximum_filter, minimum_filter

from .imgio import RgbImage, check_plane

HIST_BINS = 65536

# photopic weights (Rec. 601); they sum to 1 in decimal, not in binary floating point
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class BayerMosaic:
    """RGGB sensor samples: R at (even x, even y), B at (odd x, odd y)."""

    samples: np.ndarray
    pattern: str = "RGGB"

    def __post_init__(self):
        s = check_plane(self.samples, "samples")
        if s.shape[0] % 2 or s.shape[1] % 2:
            raise ValueError(f"mosaic dimensions must be even, got {s.shape[1]}x{s.shape[0]}")
        if self.pattern != "RGGB":
            raise ValueError("only the RGGB pattern is supported")
        object.__setattr__(self, "samples", s)

    @property
    def shape(self):
        return self.samples.shape


def site_masks(shape) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    red = (xx % 2 == 0) & (yy % 2 == 0)
    blue = (xx % 2 == 1) & (yy % 2 == 1)
    return red, ~(red | blue), blue


def mosaic(img: RgbImage) -> BayerMosaic:
    if img.width % 2 or img.height % 2:
        raise ValueError(f"image dimensions must be even, got {img.width}x{img.height}")
    red, green, blue = site_masks(img.shape)
    out = np.where(red, img.r, np.where(blue, img.b, img.g))
    return BayerMosaic(out)


_K_RB = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]])
_K_G = np.array([[0.0, 1.0, 0.0], [1.0, 4.0, 1.0], [0.0, 1.0, 0.0]])


def _fill(samples, sites, kernel):
    # normalised convolution: borders average only the neighbours that exist
    known = sites.astype(np.float64)
    num = convolve(samples * known, kernel, mode="constant", cval=0.0)
    den = convolve(known, kernel, mode="constant", cval=0.0)
    avg = num / den
    # pin the average inside its neighbours' range so flat channels stay exact
    foot = kernel > 0
    lo = minimum_filter(np.where(sites, samples, np.inf), footprint=foot, mode="constant", cval=np.inf)
    hi = maximum_filter(np.where(sites, samples, -np.inf), footprint=foot, mode="constant", cval=-np.inf)
    return np.where(sites, samples, np.clip(avg, lo, hi))


def demosaic_bilinear(m: BayerMosaic) -> RgbImage:
    red, green, blue = site_masks(m.shape)
    s = m.samples
    return RgbImage(
        np.clip(_fill(s, red, _K_RB), 0.0, 1.0),
        np.clip(_fill(s, green, _K_G), 0.0, 1.0),
        np.clip(_fill(s, blue, _K_RB), 0.0, 1.0),
    )


def equalise_histogram(p: np.ndarray, bins: int = HIST_BINS) -> np.ndarray:
    """Cumulative-distribution equalisation over `bins` levels.

    A plane occupying a single bin maps to all zeros.
    """
    p = np.asarray(p, dtype=np.float64)
    idx = np.rint(np.clip(p, 0.0, 1.0) * (bins - 1)).astype(np.intp)
    cdf = np.cumsum(np.bincount(idx.ravel(), minlength=bins))
    n = idx.size
    cdf_min = cdf[idx.min()]
    if n == cdf_min:
        return np.zeros_like(p)
    out = (cdf[idx] - cdf_min) / float(n - cdf_min)
    return np.clip(out, 0.0, 1.0)


def luminance(img: RgbImage) -> np.ndarray:
    """Y = 0.299 R + 0.587 G + 0.114 B, evaluated relative to G.

    The rearranged form returns a grey pixel's value bit-exactly.
    """
    wr, _, wb = LUMA_WEIGHTS
    return np.clip(img.g + wr * (img.r - img.g) + wb * (img.b - img.g), 0.0, 1.0)


@dataclass
class DifferenceMap:
    plane: np.ndarray
    mean_masked: Optional[float] = None


def abs_difference(a: np.ndarray, b: np.ndarray) -> DifferenceMap:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return DifferenceMap(np.abs(a - b))


def masked_average(d: DifferenceMap, mask: np.ndarray) -> float:
    """Mean of the difference samples under the set bits of mask."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != d.plane.shape:
        raise ValueError(f"mask shape {mask.shape} does not match map {d.plane.shape}")
    n = int(np.count_nonzero(mask))
    if n == 0:
        raise ValueError("empty mask")
    d.mean_masked = float(d.plane[mask].sum() / n)
    return d.mean_masked


@dataclass(frozen=True)
class AreaReduction:
    percent: float
    degenerate: bool = False


def difference_area_reduction(
    before: DifferenceMap, after: DifferenceMap, mask: np.ndarray
) -> AreaReduction:
    """Percentage drop of masked mean difference; negative if alignment got worse.

    A zero `before` mean cannot be reduced: reported as 0 % with degenerate set.
    """
    if before.plane.shape != after.plane.shape:
        raise ValueError("difference maps differ in size")
    m0 = masked_average(before, mask)
    m1 = masked_average(after, mask)
    if m0 == 0.0:
        return AreaReduction(0.0, degenerate=True)
    return AreaReduction(100.0 * (m0 - m1) / m0)
