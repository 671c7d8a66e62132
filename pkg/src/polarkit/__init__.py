"""polarkit: a polarimetric imaging toolkit with a physics-grounded dataset
pipeline, a desk-scale dual-stream fusion simulator, and judge-based scoring.

Submodules
----------
stokes     Stokes decoding, Malus-law synthesis, DoLP/AoLP derivation.
mosaic     Quad micro-polarizer frame splitting and interpolation.
encoding   3-channel polarization encodings and channel normalization.
coco       COCO annotation parsing, RLE and polygon mask decoding.
analysis   Reflection localization, glass statistics, detection diffs.
datagen    Prompt assembly, generation clients, verification, splits.
fusion     Dual-stream transformer simulator with two-stage training.
judge      1-10 judge scoring and sample-weighted aggregation.
formats    Binary map/mosaic file formats and atomic JSON(L) writers.
cli        The `polarkit` command-line interface.
"""

from . import analysis, coco, encoding, formats, mosaic, stokes
from .errors import (
    CompositionError,
    DataError,
    FormatError,
    GenerationError,
    IntegrityError,
    PolarkitError,
    StructuralError,
    TransportError,
    UsageError,
)

__version__ = "0.1.0"

__all__ = [
    "CompositionError",
    "DataError",
    "FormatError",
    "GenerationError",
    "IntegrityError",
    "PolarkitError",
    "StructuralError",
    "TransportError",
    "UsageError",
    "analysis",
    "coco",
    "encoding",
    "formats",
    "mosaic",
    "stokes",
]
