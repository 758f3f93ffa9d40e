"""Lateral chromatic aberration: coefficient recovery, correction and quantification."""

__version__ = "0.1.0"

from .imgio import ImageMetadata, RgbImage, read_image, read_metadata, write_image
from .lensdb import CorrectionRecord, LensDatabase, LensParams, QueryWeights
from .quantify import quantify_pair
from .recover import RecoverySettings, recover_coefficients
from .synth import ChequerSpec, apply_lca, render_chequerboard
from .warp import IDENTITY, Coefficients, Intrinsics, correct_image

__all__ = [
    "ChequerSpec",
    "Coefficients",
    "CorrectionRecord",
    "IDENTITY",
    "ImageMetadata",
    "Intrinsics",
    "LensDatabase",
    "LensParams",
    "QueryWeights",
    "RecoverySettings",
    "RgbImage",
    "apply_lca",
    "correct_image",
    "quantify_pair",
    "read_image",
    "read_metadata",
    "recover_coefficients",
    "render_chequerboard",
    "write_image",
]
