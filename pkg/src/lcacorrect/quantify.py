"""Spatial-frequency change between two images, from their luminance spectra."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .imgio import RgbImage
from .planes import luminance

DEFAULT_WINDOW = 11


@dataclass(frozen=True)
class MagnitudeMap:
    """log((1 + |F|) / height) of the padded, DC-centred spectrum."""

    values: np.ndarray
    source_height: int

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class Spectrogram:
    freq_fraction: np.ndarray  # bin / (n/2), 1.0 is the Nyquist frequency
    values: np.ndarray
    counts: np.ndarray  # pixels that fell in each ring
    window: int

    def __len__(self):
        return len(self.values)

    def integral(self) -> float:
        return float(self.values.sum())


def pad_square(p: np.ndarray) -> np.ndarray:
    h, w = p.shape
    n = max(h, w)
    out = np.zeros((n, n), dtype=np.float64)
    out[:h, :w] = p
    return out


def dft(p: np.ndarray) -> np.ndarray:
    """Zero-padded square DFT with 1/(MN) normalisation, DC at [0, 0]."""
    sq = pad_square(np.asarray(p, dtype=np.float64))
    return np.fft.fft2(sq) / sq.size


def dft_magnitude(lum: np.ndarray) -> MagnitudeMap:
    lum = np.asarray(lum, dtype=np.float64)
    if lum.size == 0:
        raise ValueError("empty plane")
    h = lum.shape[0]
    mag = np.abs(dft(lum))
    return MagnitudeMap(np.fft.fftshift(np.log((1.0 + mag) / h)), h)


def radial_bins(n: int) -> tuple[np.ndarray, np.ndarray, int]:
    """Integer ring index per pixel of a centred n x n map, and a keep mask.

    Rings at or beyond n/2 are dropped; there are floor(n/2)+1 bins, so for
    even n the last (Nyquist) bin is always empty.
    """
    c = n // 2
    v, u = np.mgrid[0:n, 0:n]
    rho = np.sqrt((u - c) ** 2 + (v - c) ** 2)
    keep = rho < n / 2.0
    return np.floor(rho).astype(np.intp), keep, n // 2 + 1


def hann_smooth(values: np.ndarray, counts: np.ndarray, window: int) -> np.ndarray:
    """Hann-weighted moving average over populated bins.

    Near the ends and next to empty bins the window is truncated and
    renormalised, so a flat profile stays flat.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    if window == 1:
        return np.where(counts > 0, values, 0.0)
    kern = np.hanning(window + 2)[1:-1]
    kern = kern / kern.sum()
    occupied = (counts > 0).astype(np.float64)
    # centred slice of the full convolution; "same" mode would return the
    # kernel's length when it is longer than the profile
    lo = (window - 1) // 2
    num = np.convolve(values * occupied, kern)[lo : lo + len(values)]
    den = np.convolve(occupied, kern)[lo : lo + len(values)]
    out = np.zeros_like(values)
    ok = (counts > 0) & (den > 0)
    out[ok] = num[ok] / den[ok]
    return out


def spectrogram_diff(a: MagnitudeMap, b: MagnitudeMap, window: int = DEFAULT_WINDOW) -> Spectrogram:
    """Ring-averaged (a - b), Hann smoothed."""
    if a.values.shape != b.values.shape:
        raise ValueError(f"magnitude maps differ in size: {a.n} vs {b.n}")
    diff = a.values - b.values
    ring, keep, nbins = radial_bins(a.n)
    counts = np.bincount(ring[keep], minlength=nbins)[:nbins]
    sums = np.bincount(ring[keep], weights=diff[keep], minlength=nbins)[:nbins]
    means = np.divide(sums, counts, out=np.zeros(nbins), where=counts > 0)
    freq = np.arange(nbins) / (a.n / 2.0)
    return Spectrogram(freq, hann_smooth(means, counts, window), counts, window)


def quantify_pair(before: RgbImage, after: RgbImage, window: int = DEFAULT_WINDOW) -> Spectrogram:
    """Positive values: spatial frequency gained by `after`."""
    if before.shape != after.shape:
        raise ValueError("images differ in size")
    return spectrogram_diff(
        dft_magnitude(luminance(after)), dft_magnitude(luminance(before)), window
    )


def write_spectrogram(path, s: Spectrogram) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("freq_fraction", "delta"))
        for f, v in zip(s.freq_fraction, s.values):
            w.writerow((f"{f:.9g}", f"{v:.9g}"))
