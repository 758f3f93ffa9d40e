"""Netpbm raster I/O, plane split/merge and sidecar lens metadata.

Images are held as three float64 planes with samples in [0, 1]. Only the
binary Netpbm formats are handled: P6 (RGB) and P5 (greyscale), with a
maxval of 255 or 65535. 16-bit samples are big-endian.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

SIDECAR_SUFFIX = ".lens.json"

ORIENTATIONS = (
    "top-left",
    "top-right",
    "bottom-right",
    "bottom-left",
    "left-top",
    "right-top",
    "right-bottom",
    "left-bottom",
)


class ImageFormatError(ValueError):
    """Raised for unsupported, malformed or truncated raster files."""


class MetadataError(ValueError):
    """Raised when a sidecar metadata file is incomplete or invalid."""


def check_plane(p: np.ndarray, name: str = "plane") -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0:
        raise ValueError(f"{name} samples must lie in [0, 1]")
    return p


@dataclass(frozen=True)
class RgbImage:
    """Three same-sized planes of normalised intensities."""

    r: np.ndarray
    g: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        planes = [check_plane(p, n) for p, n in zip((self.r, self.g, self.b), "rgb")]
        if not (planes[0].shape == planes[1].shape == planes[2].shape):
            raise ValueError("r, g and b planes must share identical dimensions")
        for name, p in zip("rgb", planes):
            object.__setattr__(self, name, p)

    @property
    def height(self) -> int:
        return self.g.shape[0]

    @property
    def width(self) -> int:
        return self.g.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.g.shape

    def planes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.r, self.g, self.b

    def stack(self) -> np.ndarray:
        """Interleaved (height, width, 3) view, as stored on disk."""
        return np.stack([self.r, self.g, self.b], axis=-1)

    @classmethod
    def from_stack(cls, arr: np.ndarray) -> "RgbImage":
        return cls(arr[..., 0], arr[..., 1], arr[..., 2])

    @classmethod
    def grey(cls, p: np.ndarray) -> "RgbImage":
        p = check_plane(p)
        return cls(p.copy(), p.copy(), p.copy())


# ---------------------------------------------------------------- raster I/O


def _read_header(data: bytes) -> tuple[str, int, int, int, int]:
    """Parse a Netpbm header; returns magic, width, height, maxval, offset."""
    tokens: list[bytes] = []
    pos = 0
    n = len(data)
    while len(tokens) < 4:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= n or not data[pos : pos + 1].isspace():
        raise ImageFormatError("truncated header")
    pos += 1

    magic = tokens[0].decode("ascii", "replace")
    if magic not in ("P5", "P6"):
        raise ImageFormatError(f"unsupported format {magic!r}; expected binary P5 or P6")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ImageFormatError("malformed header") from exc
    if width < 1 or height < 1:
        raise ImageFormatError(f"zero dimensions ({width}x{height})")
    if maxval not in (255, 65535):
        raise ImageFormatError(f"unsupported maxval {maxval}; expected 255 or 65535")
    return magic, width, height, maxval, pos


def read_image(path) -> RgbImage:
    """Read a P5/P6 file into normalised planes (v / maxval)."""
    data = Path(path).read_bytes()
    magic, width, height, maxval, offset = _read_header(data)
    channels = 3 if magic == "P6" else 1
    dtype = np.dtype(">u2") if maxval == 65535 else np.dtype("u1")
    count = width * height * channels
    need = count * dtype.itemsize
    if len(data) - offset < need:
        raise ImageFormatError(
            f"truncated raster: expected {need} bytes, found {len(data) - offset}"
        )
    raw = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    if raw.max(initial=0) > maxval:
        raise ImageFormatError("sample exceeds maxval")
    samples = raw.astype(np.float64) / maxval
    if channels == 1:
        return RgbImage.grey(samples.reshape(height, width))
    return RgbImage.from_stack(samples.reshape(height, width, 3))


def image_depth(path) -> int:
    """Bits per sample (8 or 16) declared by a Netpbm header."""
    with open(path, "rb") as fh:
        head = fh.read(4096)
    maxval = _read_header(head + b"\n")[3]
    return 16 if maxval == 65535 else 8


def quantise(p: np.ndarray, depth: int) -> np.ndarray:
    """Round-half-up of v * (2**depth - 1) to unsigned integers."""
    if depth not in (8, 16):
        raise ValueError("depth must be 8 or 16")
    maxval = (1 << depth) - 1
    q = np.floor(np.clip(p, 0.0, 1.0) * maxval + 0.5)
    return q.astype(np.uint16 if depth == 16 else np.uint8)


def write_image(img: RgbImage, path, depth: int = 16) -> None:
    """Write img as binary P6 at 8 or 16 bits per sample."""
    maxval = (1 << depth) - 1
    q = quantise(img.stack(), depth)
    if depth == 16:
        q = q.astype(">u2")
    header = f"P6\n{img.width} {img.height}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + q.tobytes())


def write_plane(p: np.ndarray, path, depth: int = 16) -> None:
    """Write a single plane as binary P5 (used for difference maps)."""
    p = check_plane(p)
    maxval = (1 << depth) - 1
    q = quantise(p, depth)
    if depth == 16:
        q = q.astype(">u2")
    header = f"P5\n{p.shape[1]} {p.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + q.tobytes())


# ------------------------------------------------------------------ metadata


@dataclass
class ImageMetadata:
    lens_id: str
    camera_id: str
    focal_length: float
    aperture: float
    focus_distance: float
    orientation: str = "top-left"
    width: Optional[int] = None
    height: Optional[int] = None
    lca_corrected: bool = False
    centre_x: Optional[float] = None
    centre_y: Optional[float] = None
    coeffs_rg: Optional[tuple[float, ...]] = None
    coeffs_bg: Optional[tuple[float, ...]] = None
    # keys this module does not interpret but must carry through (e.g. "truth")
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("focal_length", "aperture", "focus_distance"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise MetadataError(f"{name} must be a number")
            if not math.isfinite(value) or value <= 0:
                raise MetadataError(f"{name} must be positive, got {value}")
            setattr(self, name, float(value))
        if self.orientation not in ORIENTATIONS:
            raise MetadataError(f"unknown orientation {self.orientation!r}")

    def matches(self, img: RgbImage) -> bool:
        return (self.width is None or self.width == img.width) and (
            self.height is None or self.height == img.height
        )


_REQUIRED = ("lens_id", "camera_id", "focal_length_mm", "aperture_f", "focus_distance_mm")
_KNOWN = _REQUIRED + (
    "orientation",
    "width",
    "height",
    "lca_corrected",
    "centre_x",
    "centre_y",
    "coeffs_rg",
    "coeffs_bg",
)


def sidecar_path(image_path) -> Path:
    """image.ppm -> image.lens.json"""
    p = Path(image_path)
    return p.with_name(p.stem + SIDECAR_SUFFIX)


def _coeff_tuple(value, key):
    if value is None:
        return None
    if not isinstance(value, Sequence) or len(value) != 4:
        raise MetadataError(f"{key} must be a list of 4 numbers")
    return tuple(float(v) for v in value)


def metadata_from_dict(doc: dict) -> ImageMetadata:
    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise MetadataError(f"missing field: {', '.join(missing)}")
    return ImageMetadata(
        lens_id=str(doc["lens_id"]),
        camera_id=str(doc["camera_id"]),
        focal_length=doc["focal_length_mm"],
        aperture=doc["aperture_f"],
        focus_distance=doc["focus_distance_mm"],
        orientation=doc.get("orientation", "top-left"),
        width=doc.get("width"),
        height=doc.get("height"),
        lca_corrected=bool(doc.get("lca_corrected", False)),
        centre_x=doc.get("centre_x"),
        centre_y=doc.get("centre_y"),
        coeffs_rg=_coeff_tuple(doc.get("coeffs_rg"), "coeffs_rg"),
        coeffs_bg=_coeff_tuple(doc.get("coeffs_bg"), "coeffs_bg"),
        extra={k: v for k, v in doc.items() if k not in _KNOWN},
    )


def metadata_to_dict(meta: ImageMetadata) -> dict:
    doc = {
        "lens_id": meta.lens_id,
        "camera_id": meta.camera_id,
        "focal_length_mm": meta.focal_length,
        "aperture_f": meta.aperture,
        "focus_distance_mm": meta.focus_distance,
        "orientation": meta.orientation,
        "width": meta.width,
        "height": meta.height,
        "lca_corrected": meta.lca_corrected,
        "centre_x": meta.centre_x,
        "centre_y": meta.centre_y,
        "coeffs_rg": list(meta.coeffs_rg) if meta.coeffs_rg is not None else None,
        "coeffs_bg": list(meta.coeffs_bg) if meta.coeffs_bg is not None else None,
    }
    doc.update(meta.extra)
    return doc


def read_metadata(path) -> ImageMetadata:
    """Load a sidecar. Unknown keys are kept in ``extra`` but not interpreted."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MetadataError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise MetadataError(f"{path}: expected a JSON object")
    return metadata_from_dict(doc)


def dump_metadata(meta: ImageMetadata, path) -> None:
    # repr-exact floats: json emits the shortest round-tripping form
    Path(path).write_text(json.dumps(metadata_to_dict(meta), indent=2) + "\n", encoding="utf-8")


def write_metadata(meta: ImageMetadata, coeffs_rg, coeffs_bg, path) -> ImageMetadata:
    """Write a sidecar flagged as LCA-corrected with both coefficient sets.

    Returns the metadata object that was written.
    """
    out = ImageMetadata(
        **{
            **meta.__dict__,
            "lca_corrected": True,
            "coeffs_rg": tuple(float(v) for v in coeffs_rg),
            "coeffs_bg": tuple(float(v) for v in coeffs_bg),
            "extra": dict(meta.extra),
        }
    )
    dump_metadata(out, path)
    return out
