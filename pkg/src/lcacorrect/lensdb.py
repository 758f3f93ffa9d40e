"""Append-only store of correction coefficients keyed by lens parameters.

One JSON object per line. Lookups scan the whole file, which is fine for
the few hundred records a single lens accumulates.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .recover import RecoverySettings
from .warp import Coefficients, Intrinsics, radial_map


class LensNotFound(LookupError):
    pass


@dataclass(frozen=True)
class LensParams:
    lens_id: str
    focal_length: float
    aperture: float
    focus_distance: float

    def __post_init__(self):
        for name in ("focal_length", "aperture", "focus_distance"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v!r}")

    def log2(self) -> np.ndarray:
        return np.log2([self.focal_length, self.aperture, self.focus_distance])


@dataclass(frozen=True)
class QueryWeights:
    w_focal: float = 1.0
    w_aperture: float = 1.0
    w_focus: float = 0.25

    def __post_init__(self):
        w = (self.w_focal, self.w_aperture, self.w_focus)
        if any(v < 0 for v in w) or not any(v > 0 for v in w):
            raise ValueError("weights must be >= 0 and not all zero")

    def vector(self) -> np.ndarray:
        return np.array([self.w_focal, self.w_aperture, self.w_focus])


def now_rfc3339() -> str:
    """Current UTC time; SOURCE_DATE_EPOCH pins it for reproducible output."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    ts = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return ts.isoformat(timespec="microseconds").replace("+00:00", "Z")


def _parse_time(s: str) -> datetime:
    return datetime.fromisoformat(s.replace("Z", "+00:00"))


@dataclass(frozen=True)
class CorrectionRecord:
    params: LensParams
    rg: Coefficients
    bg: Coefficients
    width: int
    height: int
    centre_x: float
    centre_y: float
    created_at: str

    def __post_init__(self):
        object.__setattr__(self, "rg", Coefficients(*(float(v) for v in self.rg)))
        object.__setattr__(self, "bg", Coefficients(*(float(v) for v in self.bg)))
        bounds = RecoverySettings()
        for name in ("rg", "bg"):
            if not bounds.contains(getattr(self, name)):
                raise ValueError(f"{name} coefficients outside recovery bounds: {getattr(self, name)}")
        _parse_time(self.created_at)

    def to_json(self) -> str:
        doc = {
            "lens_id": self.params.lens_id,
            "focal_length_mm": self.params.focal_length,
            "aperture_f": self.params.aperture,
            "focus_distance_mm": self.params.focus_distance,
            "coeffs_rg": list(self.rg),
            "coeffs_bg": list(self.bg),
            "width": self.width,
            "height": self.height,
            "centre_x": self.centre_x,
            "centre_y": self.centre_y,
            "created_at": self.created_at,
        }
        return json.dumps(doc, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "CorrectionRecord":
        d = json.loads(line)
        return cls(
            params=LensParams(
                d["lens_id"], d["focal_length_mm"], d["aperture_f"], d["focus_distance_mm"]
            ),
            rg=Coefficients(*d["coeffs_rg"]),
            bg=Coefficients(*d["coeffs_bg"]),
            width=int(d["width"]),
            height=int(d["height"]),
            centre_x=float(d["centre_x"]),
            centre_y=float(d["centre_y"]),
            created_at=d["created_at"],
        )


class LensDatabase:
    """Newline-delimited JSON file; single writer, any number of readers."""

    def __init__(self, path):
        self.path = Path(path)

    def append(self, rec: CorrectionRecord) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(rec.to_json() + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def records(self) -> Iterator[CorrectionRecord]:
        if not self.path.exists():
            return
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    yield CorrectionRecord.from_json(line)
                except (ValueError, KeyError, TypeError) as exc:
                    raise ValueError(f"{self.path}:{lineno}: bad record ({exc})") from exc

    def for_lens(self, lens_id: str) -> list[tuple[int, CorrectionRecord]]:
        """(file order, record) pairs for one lens."""
        return [(i, r) for i, r in enumerate(self.records()) if r.params.lens_id == lens_id]


def db_append(store: LensDatabase, rec: CorrectionRecord) -> None:
    store.append(rec)


def _newest_key(item):
    order, rec = item
    return (_parse_time(rec.created_at), order)


def param_distance(a: LensParams, b: LensParams, w: QueryWeights = QueryWeights()) -> float:
    """Weighted Euclidean distance between log2 parameter vectors."""
    d = a.log2() - b.log2()
    return float(math.sqrt(np.sum(w.vector() * d * d)))


def _closest(cands, q: LensParams, w: QueryWeights):
    best = None
    for item in cands:
        dist = param_distance(item[1].params, q, w)
        if best is None or dist < best[0] or (
            dist == best[0] and _newest_key(item) > _newest_key(best[1])
        ):
            best = (dist, item)
    return best[1][1], best[0]


def db_nearest(
    store: LensDatabase, q: LensParams, w: QueryWeights = QueryWeights()
) -> tuple[CorrectionRecord, float]:
    """Closest record for q.lens_id and its distance; ties go to the newest record."""
    cands = store.for_lens(q.lens_id)
    if not cands:
        raise LensNotFound(f"no record for lens {q.lens_id!r}")
    return _closest(cands, q, w)


_INTERP_ORDER = ("aperture", "focal_length", "focus_distance")


def _bracket(cands, q: LensParams, param: str, w: QueryWeights):
    """Nearest record at or below q along `param` and nearest at or above."""
    qv = getattr(q, param)
    lower = [c for c in cands if getattr(c[1].params, param) <= qv]
    upper = [c for c in cands if getattr(c[1].params, param) >= qv]
    if not lower or not upper:
        return None
    return _closest(lower, q, w)[0], _closest(upper, q, w)[0]


def fit_polynomial(r: np.ndarray, values: np.ndarray) -> Coefficients:
    """Least-squares a*r + b*r^2 + c*r^3 + d*r^4 (no constant term)."""
    basis = np.stack([r, r**2, r**3, r**4], axis=1)
    coef, *_ = np.linalg.lstsq(basis, values, rcond=None)
    return Coefficients(*(float(v) for v in coef))


def db_interpolate(
    store: LensDatabase,
    q: LensParams,
    intr: Intrinsics,
    w: QueryWeights = QueryWeights(),
) -> tuple[Coefficients, Coefficients]:
    """First-order interpolation between bracketing records.

    For each parameter (aperture, focal length, focus distance) that has a
    distinct lower and upper neighbour, the two neighbours' polynomials are
    blended linearly in log2 parameter space, sampled at one point per pixel
    of radius. All blended curves are then refitted as one polynomial. If no
    parameter brackets the query, the nearest record is returned unchanged.
    """
    cands = store.for_lens(q.lens_id)
    if len(cands) < 2:
        raise LensNotFound(f"interpolation needs at least 2 records for lens {q.lens_id!r}")

    n_samples = max(int(math.ceil(intr.r_norm)), 4) + 1
    radii = np.linspace(0.0, 1.0, n_samples)
    curves_rg, curves_bg = [], []
    for param in _INTERP_ORDER:
        pair = _bracket(cands, q, param, w)
        if pair is None:
            continue
        lo, hi = pair
        lv = math.log2(getattr(lo.params, param))
        hv = math.log2(getattr(hi.params, param))
        if lv == hv:
            continue
        t = (math.log2(getattr(q, param)) - lv) / (hv - lv)
        t = min(max(t, 0.0), 1.0)
        curves_rg.append(radial_map(radii, lo.rg) * (1.0 - t) + radial_map(radii, hi.rg) * t)
        curves_bg.append(radial_map(radii, lo.bg) * (1.0 - t) + radial_map(radii, hi.bg) * t)

    if not curves_rg:
        rec, _ = db_nearest(store, q, w)
        return rec.rg, rec.bg
    r_all = np.tile(radii, len(curves_rg))
    return (
        fit_polynomial(r_all, np.concatenate(curves_rg)),
        fit_polynomial(r_all, np.concatenate(curves_bg)),
    )


def record_from(
    meta,
    rg: Coefficients,
    bg: Coefficients,
    intr: Intrinsics,
    width: int,
    height: int,
    created_at: Optional[str] = None,
) -> CorrectionRecord:
    return CorrectionRecord(
        params=LensParams(meta.lens_id, meta.focal_length, meta.aperture, meta.focus_distance),
        rg=rg,
        bg=bg,
        width=width,
        height=height,
        centre_x=intr.centre_x,
        centre_y=intr.centre_y,
        created_at=created_at or now_rfc3339(),
    )
