"""Quad micro-polarizer mosaic handling: split to half resolution or
interpolate each orientation back to full resolution.

A 2x2 superpixel carries one sample per polarizer orientation.  Commercial
sensors disagree on which corner holds which orientation, so the layout is
explicit data: four angles in reading order (top-left, top-right,
bottom-left, bottom-right).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, StructuralError, UsageError
from .stokes import AngularIntensityStack, _as_plane, _check_finite, _check_nonnegative

# Reading-order positions of the four superpixel corners.
_POSITIONS = ((0, 0), (0, 1), (1, 0), (1, 1))

# Clockwise from top-left: 0, 45, 135, 90 -- i.e. reading order 0/45/90/135.
DEFAULT_LAYOUT = (0, 45, 90, 135)

INTERPOLATION_METHODS = ("nearest", "bilinear")


def validate_layout(layout) -> tuple[int, int, int, int]:
    angles = tuple(int(a) for a in layout)
    if sorted(angles) != [0, 45, 90, 135]:
        raise DataError(
            f"mosaic layout must assign each of 0/45/90/135 exactly once, got {layout!r}"
        )
    return angles


def layout_offsets(layout) -> dict[int, tuple[int, int]]:
    """Map orientation angle -> (row, col) offset inside the superpixel."""
    angles = validate_layout(layout)
    return {angle: _POSITIONS[i] for i, angle in enumerate(angles)}


@dataclass
class RawMosaicFrame:
    """A raw quad-mosaic frame: per-pixel samples plus the superpixel layout."""

    samples: np.ndarray
    layout: tuple[int, int, int, int] = DEFAULT_LAYOUT

    def __post_init__(self):
        self.samples = _as_plane("samples", self.samples)
        h, w = self.samples.shape
        if h % 2 or w % 2:
            raise StructuralError(f"mosaic dimensions must be even, got {h}x{w}")
        _check_finite("samples", self.samples)
        _check_nonnegative("samples", self.samples)
        self.layout = validate_layout(self.layout)

    @property
    def height(self) -> int:
        return self.samples.shape[0]

    @property
    def width(self) -> int:
        return self.samples.shape[1]


def split_mosaic(frame: RawMosaicFrame) -> AngularIntensityStack:
    """Gather each orientation's native samples into a half-resolution stack."""
    offsets = layout_offsets(frame.layout)
    planes = {}
    for angle, (dr, dc) in offsets.items():
        planes[angle] = frame.samples[dr::2, dc::2].copy()
    return AngularIntensityStack(
        i0=planes[0], i45=planes[45], i90=planes[90], i135=planes[135]
    )


def tile_stack(stack: AngularIntensityStack, layout=DEFAULT_LAYOUT) -> RawMosaicFrame:
    """Inverse of split_mosaic: re-tile four half-resolution planes."""
    offsets = layout_offsets(layout)
    h, w = stack.height * 2, stack.width * 2
    samples = np.empty((h, w), dtype=np.float64)
    for angle, (dr, dc) in offsets.items():
        samples[dr::2, dc::2] = stack.plane(angle)
    return RawMosaicFrame(samples=samples, layout=layout)


def _resample_lattice(samples: np.ndarray, dr: int, dc: int, method: str) -> np.ndarray:
    """Estimate one orientation plane at full resolution from its 2x-subsampled
    lattice at offset (dr, dc), clamping to the lattice edges."""
    sub = samples[dr::2, dc::2]
    hs, ws = sub.shape
    h, w = samples.shape

    u = (np.arange(h, dtype=np.float64) - dr) / 2.0
    v = (np.arange(w, dtype=np.float64) - dc) / 2.0
    u = np.clip(u, 0.0, hs - 1.0)
    v = np.clip(v, 0.0, ws - 1.0)

    if method == "nearest":
        ui = np.clip(np.floor(u + 0.5).astype(np.intp), 0, hs - 1)
        vi = np.clip(np.floor(v + 0.5).astype(np.intp), 0, ws - 1)
        return sub[np.ix_(ui, vi)].astype(np.float64)

    u0 = np.floor(u).astype(np.intp)
    v0 = np.floor(v).astype(np.intp)
    u1 = np.minimum(u0 + 1, hs - 1)
    v1 = np.minimum(v0 + 1, ws - 1)
    fu = (u - u0)[:, None]
    fv = (v - v0)[None, :]
    a = sub[np.ix_(u0, v0)]
    b = sub[np.ix_(u0, v1)]
    c = sub[np.ix_(u1, v0)]
    d = sub[np.ix_(u1, v1)]
    return (1 - fu) * ((1 - fv) * a + fv * b) + fu * ((1 - fv) * c + fv * d)


def interpolate_full_res(frame: RawMosaicFrame, method: str = "bilinear") -> AngularIntensityStack:
    """Interpolate all four orientations to the frame's full resolution.

    Native sample positions are preserved exactly under both methods; the
    bilinear path fills the remaining positions by separable linear
    interpolation over same-orientation neighbors (clamp-to-edge).
    """
    if method not in INTERPOLATION_METHODS:
        raise UsageError(
            f"unknown interpolation method {method!r}; expected one of {INTERPOLATION_METHODS}"
        )
    offsets = layout_offsets(frame.layout)
    planes = {
        angle: _resample_lattice(frame.samples, dr, dc, method)
        for angle, (dr, dc) in offsets.items()
    }
    return AngularIntensityStack(
        i0=planes[0], i45=planes[45], i90=planes[90], i135=planes[135]
    )
