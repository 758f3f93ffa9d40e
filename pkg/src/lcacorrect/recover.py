"""Coefficient recovery: masked inter-plane error and a bounded quasi-Newton search.

The error cannot be differentiated analytically (absolute differences of
resampled planes), so gradients are estimated by finite differences and fed
to a projected limited-memory BFGS iteration confined to a box.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .imgio import RgbImage
from .planes import abs_difference, equalise_histogram, masked_average
from .warp import Coefficients, Intrinsics, distort_plane_masked

log = logging.getLogger(__name__)

TRACE_HEADER = ("eval", "a", "b", "c", "d", "error")

# Armijo sufficient-decrease constant and backtracking limits
_ARMIJO = 1e-4
_MAX_BACKTRACK = 20
# first step of a fresh (memoryless) search direction, in coefficient units
_FIRST_STEP = 1e-2


@dataclass(frozen=True)
class RecoverySettings:
    init: Coefficients = Coefficients(0.99, 0.01, 0.0, 0.0)
    bounds_a: tuple[float, float] = (0.95, 1.05)
    bounds_bcd: tuple[float, float] = (-0.05, 0.05)
    fd_step: float = 1e-4
    f_rel_tol: float = 1e-6
    max_evals: int = 200
    history: int = 10

    def __post_init__(self):
        object.__setattr__(self, "init", Coefficients(*self.init))
        lo, hi = self.lower, self.upper
        x0 = np.asarray(self.init, dtype=np.float64)
        if not np.all((lo < x0) & (x0 < hi)):
            raise ValueError(f"initial coefficients {tuple(self.init)} not strictly inside bounds")
        if not self.fd_step > 0 or not self.f_rel_tol > 0:
            raise ValueError("fd_step and f_rel_tol must be positive")
        if self.max_evals < 2:
            raise ValueError("max_evals must be at least 2")
        if self.history < 1:
            raise ValueError("history must be at least 1")

    @property
    def lower(self) -> np.ndarray:
        return np.array([self.bounds_a[0]] + [self.bounds_bcd[0]] * 3, dtype=np.float64)

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.bounds_a[1]] + [self.bounds_bcd[1]] * 3, dtype=np.float64)

    def contains(self, c: Sequence[float]) -> bool:
        x = np.asarray(c, dtype=np.float64)
        return bool(np.all((self.lower <= x) & (x <= self.upper)))


@dataclass
class RecoveryResult:
    coeffs: Coefficients
    final_error: float
    evaluations: int
    converged: bool
    trace: list[tuple[Coefficients, float]] = field(default_factory=list)


# ----------------------------------------------------------------- objective


def objective(work: np.ndarray, ref: np.ndarray, c: Coefficients, intr: Intrinsics) -> float:
    """Masked mean absolute difference between the distorted work plane and ref."""
    if work.shape != ref.shape:
        raise ValueError(f"plane sizes differ: {work.shape} vs {ref.shape}")
    distorted, mask = distort_plane_masked(work, Coefficients(*c), intr)
    return masked_average(abs_difference(distorted, ref), mask)


# ----------------------------------------------------------------- minimiser


class _BudgetExhausted(Exception):
    pass


class _Counter:
    """Wraps f, records every evaluation and the best point seen."""

    def __init__(self, f, full_x, active, max_evals):
        self.f = f
        self.full_x = full_x
        self.active = active
        self.max_evals = max_evals
        self.trace: list[tuple[Coefficients, float]] = []
        self.best_x = None
        self.best_f = math.inf

    def expand(self, z):
        x = self.full_x.copy()
        x[self.active] = z
        return Coefficients(*(float(v) for v in x))

    def __call__(self, z) -> float:
        if len(self.trace) >= self.max_evals:
            raise _BudgetExhausted
        c = self.expand(z)
        fz = float(self.f(c))
        if not math.isfinite(fz):
            raise FloatingPointError(f"objective not finite at {tuple(c)}")
        self.trace.append((c, fz))
        # strict comparison: on ties the earlier iterate is kept
        if fz < self.best_f:
            self.best_f, self.best_x = fz, c
        return fz


def fd_gradient(f, z, fz, lo, hi, h):
    """Central differences; one-sided where a probe would leave the box.

    Forward differences carry an O(h * f'') bias per component, which the
    near-collinear polynomial terms amplify into a large offset of the
    stationary point, so the two-sided form is used wherever it fits.
    """
    g = np.zeros_like(z)
    for i in range(z.size):
        up_ok = z[i] + h <= hi[i]
        down_ok = z[i] - h >= lo[i]
        up = z.copy()
        down = z.copy()
        up[i] += h
        down[i] -= h
        if up_ok and down_ok:
            g[i] = (f(up) - f(down)) / (2.0 * h)
        elif up_ok:
            g[i] = (f(up) - fz) / h
        elif down_ok:
            g[i] = (fz - f(down)) / h
    return g


def _two_loop(g, pairs):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * s.dot(q)
        alphas.append(a)
        q -= a * y
    s, y, _ = pairs[-1]
    q *= s.dot(y) / y.dot(y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * y.dot(q)
        q += (a - b) * s
    return q


def minimise_bounded(
    f: Callable[[Coefficients], float],
    s: RecoverySettings = RecoverySettings(),
    active: Optional[Sequence[int]] = None,
) -> RecoveryResult:
    """Minimise f over the settings' bound box.

    `active` selects which coefficients vary (default: all four); the others
    stay at their initial values. Returns the best point observed, with
    converged=False if the evaluation budget ran out first.
    """
    active = np.arange(4) if active is None else np.asarray(sorted(set(active)), dtype=np.intp)
    lo = s.lower[active]
    hi = s.upper[active]
    h = s.fd_step
    fn = _Counter(f, np.asarray(s.init, dtype=np.float64), active, s.max_evals)

    z = np.asarray(s.init, dtype=np.float64)[active]
    pairs: list[tuple[np.ndarray, np.ndarray, float]] = []
    converged = False
    try:
        fz = fn(z)
        g = fd_gradient(fn, z, fz, lo, hi, h)
        while True:
            pg = np.clip(z - g, lo, hi) - z
            if np.max(np.abs(pg)) <= 1e-12:
                converged = True
                break
            # variables pinned at a bound with the gradient pushing outwards
            free = ~(((z <= lo) & (g > 0)) | ((z >= hi) & (g < 0)))
            gf = np.where(free, g, 0.0)
            d = -_two_loop(gf, pairs) if pairs else -gf
            d[~free] = 0.0
            if gf.dot(d) >= 0.0:
                pairs.clear()
                d = -gf
            alpha = 1.0 if pairs else min(1.0, _FIRST_STEP / np.max(np.abs(d)))

            accepted = None
            for _ in range(_MAX_BACKTRACK):
                zt = np.clip(z + alpha * d, lo, hi)
                if np.array_equal(zt, z):
                    break
                ft = fn(zt)
                if ft <= fz + _ARMIJO * g.dot(zt - z):
                    accepted = (zt, ft)
                    break
                alpha *= 0.5
            if accepted is None:
                if pairs:
                    # stale curvature; retry once along the plain gradient
                    pairs.clear()
                    continue
                converged = True
                break

            zt, ft = accepted
            gt = fd_gradient(fn, zt, ft, lo, hi, h)
            step, dg = zt - z, gt - g
            sy = step.dot(dg)
            if sy > 1e-12 * dg.dot(dg) and sy > 0:
                pairs.append((step, dg, 1.0 / sy))
                del pairs[: -s.history]
            rel = (fz - ft) / max(abs(fz), abs(ft), 1e-300)
            z, fz, g = zt, ft, gt
            if rel < s.f_rel_tol:
                converged = True
                break
    except _BudgetExhausted:
        log.debug("evaluation budget of %d exhausted", s.max_evals)

    return RecoveryResult(
        coeffs=fn.best_x,
        final_error=fn.best_f,
        evaluations=len(fn.trace),
        converged=converged,
        trace=fn.trace,
    )


# ------------------------------------------------------------------ pipeline


def equalised_planes(img: RgbImage):
    return tuple(equalise_histogram(p) for p in img.planes())


def recover_coefficients(
    img: RgbImage,
    intr: Intrinsics,
    s: RecoverySettings = RecoverySettings(),
) -> tuple[RecoveryResult, RecoveryResult]:
    """Recover R->G and B->G coefficients on equalised copies of the planes."""
    r_eq, g_eq, b_eq = equalised_planes(img)
    results = []
    for name, work in (("rg", r_eq), ("bg", b_eq)):
        res = minimise_bounded(lambda c, w=work: objective(w, g_eq, c, intr), s)
        log.info(
            "%s: %s error=%.6g evals=%d converged=%s",
            name, tuple(res.coeffs), res.final_error, res.evaluations, res.converged,
        )
        results.append(res)
    return results[0], results[1]


def sweep_error_surface(
    work: np.ndarray,
    ref: np.ndarray,
    intr: Intrinsics,
    grid_a: Sequence[float],
    grid_b: Sequence[float],
) -> np.ndarray:
    """Objective over an (a, b) grid with c = d = 0; rows follow grid_a."""
    out = np.empty((len(grid_a), len(grid_b)), dtype=np.float64)
    for i, a in enumerate(grid_a):
        for j, b in enumerate(grid_b):
            out[i, j] = objective(work, ref, Coefficients(float(a), float(b), 0.0, 0.0), intr)
    return out


def grid_minimum(grid: np.ndarray) -> tuple[tuple[int, int], bool]:
    """Index of the minimum cell and whether that minimum is attained only once."""
    idx = np.unravel_index(int(np.argmin(grid)), grid.shape)
    unique = int(np.count_nonzero(grid == grid[idx])) == 1
    return (int(idx[0]), int(idx[1])), unique


# ------------------------------------------------------------------ CSV dumps


def write_trace(path, *results: RecoveryResult) -> None:
    """One row per objective evaluation; the eval counter restarts per result."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for res in results:
            for k, (c, err) in enumerate(res.trace, start=1):
                w.writerow([k, *(repr(float(v)) for v in c), repr(err)])


def write_sweep(path, grid_a, grid_b, grid: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("a", "b", "error"))
        for i, a in enumerate(grid_a):
            for j, b in enumerate(grid_b):
                w.writerow([repr(float(a)), repr(float(b)), repr(float(grid[i, j]))])
