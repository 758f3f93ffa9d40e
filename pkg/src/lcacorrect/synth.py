"""Synthetic validation corpus: chequerboards with known chromatic distortion."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .imgio import ImageMetadata, RgbImage, dump_metadata, sidecar_path, write_image
from .planes import demosaic_bilinear, mosaic
from .warp import BILINEAR, Coefficients, Intrinsics, distort_plane, radial_map

# standard corpus distortion; the blue set mirrors red's sign by convention
CORPUS_RG = Coefficients(0.98, 0.01, -0.01, 0.0)
CORPUS_BG = Coefficients(1.02, -0.01, 0.01, 0.0)


@dataclass(frozen=True)
class ChequerSpec:
    width: int = 1024
    height: int = 768
    cell: int = 32
    fg: float = 1.0
    bg: float = 0.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("board dimensions must be positive")
        if self.cell < 1:
            raise ValueError("cell must be at least 1 pixel")
        if self.fg == self.bg:
            raise ValueError("fg and bg must differ")
        for v in (self.fg, self.bg):
            if not 0.0 <= v <= 1.0:
                raise ValueError("intensities must lie in [0, 1]")


def render_chequerboard(spec: ChequerSpec = ChequerSpec()) -> RgbImage:
    """Achromatic board: fg where floor(x/cell) + floor(y/cell) is even."""
    yy, xx = np.mgrid[0 : spec.height, 0 : spec.width]
    even = ((xx // spec.cell) + (yy // spec.cell)) % 2 == 0
    plane = np.where(even, spec.fg, spec.bg).astype(np.float64)
    return RgbImage.grey(plane)


def render_texture(width: int = 1024, height: int = 768, seed: int = 0) -> RgbImage:
    """Achromatic multi-scale noise texture, a stand-in for natural detail.

    Gaussian-filtered noise at octave-spaced scales, weighted by scale so
    coarse structure dominates as in natural images, then stretched to [0, 1].
    """
    if width < 1 or height < 1:
        raise ValueError("texture dimensions must be positive")
    rng = np.random.default_rng(seed)
    t = np.zeros((height, width))
    for sigma in (1.0, 2.0, 4.0, 8.0):
        t += sigma * gaussian_filter(rng.standard_normal((height, width)), sigma)
    lo, hi = t.min(), t.max()
    t = (t - lo) / (hi - lo) if hi > lo else np.zeros_like(t)
    return RgbImage.grey(t)


def apply_lca(
    img: RgbImage, rg: Coefficients, bg: Coefficients, intr: Intrinsics
) -> RgbImage:
    """Inject lateral CA with known ground truth: R and B warped, G untouched."""
    return RgbImage(
        distort_plane(img.r, Coefficients(*rg), intr, BILINEAR),
        img.g,
        distort_plane(img.b, Coefficients(*bg), intr, BILINEAR),
    )


def _margin_for(spec: ChequerSpec, intr: Intrinsics, coeffs) -> int:
    # enough border that no source sample of the crop falls off the big board
    r_max = math.hypot(max(intr.centre_x, spec.width - 1 - intr.centre_x),
                       max(intr.centre_y, spec.height - 1 - intr.centre_y)) / intr.r_norm
    r = np.linspace(0.0, r_max, 512)
    shift = max(float(np.max(np.abs(radial_map(r, c) - r))) for c in coeffs) * intr.r_norm
    period = 2 * spec.cell
    return period * int(math.ceil((shift + 4.0) / period))


def distort_chequerboard(
    spec: ChequerSpec = ChequerSpec(),
    rg: Coefficients = CORPUS_RG,
    bg: Coefficients = CORPUS_BG,
    intr: Intrinsics | None = None,
) -> RgbImage:
    """Board with LCA applied as if the pattern extended past the frame.

    Warping a finite board pulls zeros in at the border, which biases
    recovery. Rendering a wider board (margin a multiple of the pattern
    period, so the phase is unchanged) and cropping avoids that.
    """
    intr = intr or Intrinsics.for_shape((spec.height, spec.width))
    m = _margin_for(spec, intr, (rg, bg))
    big = ChequerSpec(spec.width + 2 * m, spec.height + 2 * m, spec.cell, spec.fg, spec.bg)
    big_intr = Intrinsics(intr.centre_x + m, intr.centre_y + m, intr.r_norm)
    out = apply_lca(render_chequerboard(big), rg, bg, big_intr)
    crop = (slice(m, m + spec.height), slice(m, m + spec.width))
    return RgbImage(*(p[crop] for p in out.planes()))


def simulate_sensor(img: RgbImage) -> RgbImage:
    """Bayer sample then bilinear demosaic, as a raw pipeline would."""
    return demosaic_bilinear(mosaic(img))


def write_corpus_item(
    out_dir,
    name: str,
    spec: ChequerSpec = ChequerSpec(),
    rg: Coefficients = CORPUS_RG,
    bg: Coefficients = CORPUS_BG,
    *,
    sensor: bool = False,
    lens_id: str = "synthetic-lens",
    focal_length: float = 18.0,
    aperture: float = 8.0,
    focus_distance: float = 3100.0,
) -> Path:
    """Render, distort and write one image plus its sidecar; returns the image path.

    Ground truth goes under the sidecar's "truth" key.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    img = distort_chequerboard(spec, rg, bg)
    if sensor:
        img = simulate_sensor(img)
    path = out_dir / f"{name}.ppm"
    write_image(img, path, depth=16)
    meta = ImageMetadata(
        lens_id=lens_id,
        camera_id="synthetic",
        focal_length=focal_length,
        aperture=aperture,
        focus_distance=focus_distance,
        width=img.width,
        height=img.height,
        extra={
            "truth": {
                "coeffs_rg": list(rg),
                "coeffs_bg": list(bg),
                "chequer": json.loads(json.dumps(spec.__dict__)),
                "sensor": sensor,
            }
        },
    )
    dump_metadata(meta, sidecar_path(path))
    return path
