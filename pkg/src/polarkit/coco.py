"""COCO-format annotation parsing and segmentation decoding.

Supports uncompressed RLE (column-major runs, background first — the single
most common interop bug in this format), the compressed ASCII RLE string
form, and polygon rings rasterized with pixel-center sampling under the
even-odd rule with half-open (top-left) edge handling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, IntegrityError

# Parity fill uses half-open vertical edge spans [min_y, max_y) and a strict
# "center strictly left of the crossing" rule, i.e. the top-left convention:
# pixels on a left/top boundary are inside, on a right/bottom boundary outside.


@dataclass
class ImageInfo:
    id: int
    width: int
    height: int
    file_name: str = ""


@dataclass
class Category:
    id: int
    name: str = ""


@dataclass
class Annotation:
    id: int
    image_id: int
    category_id: int
    bbox: tuple[float, float, float, float]
    segmentation: object = None  # list of polygon rings, or RLE dict


@dataclass
class AnnotationSet:
    images: list[ImageInfo]
    annotations: list[Annotation]
    categories: list[Category]
    warnings: list[str] = field(default_factory=list)

    def image_by_id(self, image_id: int) -> ImageInfo:
        for img in self.images:
            if img.id == image_id:
                return img
        raise IntegrityError(f"unknown image_id {image_id}")

    def annotations_for_image(self, image_id: int) -> list[Annotation]:
        return [a for a in self.annotations if a.image_id == image_id]


@dataclass
class InstanceMask:
    bits: np.ndarray  # (H, W) bool
    annotation_id: int | None = None

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2:
            raise FormatError(f"instance mask must be 2-D, got shape {self.bits.shape}")

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def area(self) -> int:
        return int(self.bits.sum())


def parse_annotations(document) -> AnnotationSet:
    """Parse a COCO-style annotation document (dict, JSON text, or bytes).

    Referential integrity (annotation.image_id -> images) is enforced;
    out-of-bounds bboxes are collected as warnings, unknown fields ignored.
    """
    if isinstance(document, (bytes, str)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise FormatError(
                f"malformed annotation payload at line {exc.lineno} column {exc.colno}: {exc.msg}"
            ) from exc
    if not isinstance(document, dict):
        raise FormatError(f"annotation payload must be a JSON object, got {type(document).__name__}")

    def _require(entry, key, where):
        if key not in entry:
            raise FormatError(f"{where} entry missing required field {key!r}: {entry!r}")
        return entry[key]

    images = [
        ImageInfo(
            id=int(_require(e, "id", "image")),
            width=int(_require(e, "width", "image")),
            height=int(_require(e, "height", "image")),
            file_name=str(e.get("file_name", "")),
        )
        for e in document.get("images", [])
    ]
    categories = [
        Category(id=int(_require(e, "id", "category")), name=str(e.get("name", "")))
        for e in document.get("categories", [])
    ]
    annotations = []
    for e in document.get("annotations", []):
        bbox = e.get("bbox", (0.0, 0.0, 0.0, 0.0))
        if len(bbox) != 4:
            raise FormatError(f"annotation {e.get('id')}: bbox must have 4 entries, got {bbox!r}")
        annotations.append(
            Annotation(
                id=int(_require(e, "id", "annotation")),
                image_id=int(_require(e, "image_id", "annotation")),
                category_id=int(e.get("category_id", 0)),
                bbox=tuple(float(v) for v in bbox),
                segmentation=e.get("segmentation"),
            )
        )

    image_ids = {img.id for img in images}
    dangling = sorted({a.image_id for a in annotations if a.image_id not in image_ids})
    if dangling:
        raise IntegrityError(f"annotations reference missing image ids: {dangling}")

    warnings = []
    by_id = {img.id: img for img in images}
    for a in annotations:
        img = by_id[a.image_id]
        x, y, w, h = a.bbox
        if x < 0 or y < 0 or x + w > img.width or y + h > img.height:
            warnings.append(
                f"annotation {a.id}: bbox {a.bbox} exceeds image {img.id} bounds "
                f"({img.width}x{img.height})"
            )
    return AnnotationSet(images=images, annotations=annotations, categories=categories, warnings=warnings)


def decode_rle(counts, height: int, width: int, annotation_id: int | None = None) -> InstanceMask:
    """Decode uncompressed COCO RLE: column-major runs, background first."""
    counts = [int(c) for c in counts]
    if any(c < 0 for c in counts):
        raise FormatError(f"RLE counts must be non-negative, got {counts}")
    total = sum(counts)
    if total != height * width:
        raise FormatError(f"RLE runs sum to {total}, expected {height}x{width}={height * width}")
    values = np.arange(len(counts)) % 2  # background, foreground, background, ...
    flat = np.repeat(values.astype(bool), counts)
    bits = flat.reshape(width, height).T  # column-major layout
    return InstanceMask(bits=bits, annotation_id=annotation_id)


def rle_string_to_counts(encoded: str) -> list[int]:
    """Expand the compressed ASCII RLE form to plain counts.

    Each count is stored LEB128-style in 5-bit groups (chars offset by 48,
    bit 0x20 continues); counts from index 3 on are deltas against the count
    two places back.
    """
    counts: list[int] = []
    pos = 0
    n = len(encoded)
    while pos < n:
        x = 0
        k = 0
        more = True
        while more:
            if pos >= n:
                raise FormatError("truncated compressed RLE string")
            c = ord(encoded[pos]) - 48
            if c < 0 or c > 63:
                raise FormatError(f"invalid compressed RLE character {encoded[pos]!r}")
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            pos += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    return counts


def counts_to_rle_string(counts) -> str:
    """Inverse of rle_string_to_counts."""
    out = []
    counts = [int(c) for c in counts]
    for i, c in enumerate(counts):
        x = c - counts[i - 2] if i > 2 else c
        more = True
        while more:
            chunk = x & 0x1F
            x >>= 5
            more = x != -1 if chunk & 0x10 else x != 0
            if more:
                chunk |= 0x20
            out.append(chr(chunk + 48))
    return "".join(out)


def decode_rle_payload(segmentation: dict, annotation_id: int | None = None) -> InstanceMask:
    """Decode an RLE segmentation dict ({'size': [h, w], 'counts': ...})."""
    try:
        height, width = (int(v) for v in segmentation["size"])
        counts = segmentation["counts"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed RLE payload: {segmentation!r}") from exc
    if isinstance(counts, (bytes, str)):
        if isinstance(counts, bytes):
            counts = counts.decode("ascii")
        counts = rle_string_to_counts(counts)
    return decode_rle(counts, height, width, annotation_id=annotation_id)


def _ring_vertices(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        if pts.size % 2:
            raise FormatError(f"flat polygon list must have an even length, got {pts.size}")
        pts = pts.reshape(-1, 2)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise FormatError(f"polygon ring must be (x, y) pairs, got shape {pts.shape}")
    if pts.shape[0] < 3:
        raise FormatError(f"polygon ring needs at least 3 vertices, got {pts.shape[0]}")
    if not np.isfinite(pts).all():
        raise FormatError("polygon ring has non-finite coordinates")
    return pts


def _fill_ring(pts: np.ndarray, height: int, width: int, bits: np.ndarray) -> None:
    x1 = pts[:, 0]
    y1 = pts[:, 1]
    x2 = np.roll(x1, -1)
    y2 = np.roll(y1, -1)
    keep = y1 != y2  # horizontal edges never cross a scanline's half-open span
    x1, y1, x2, y2 = x1[keep], y1[keep], x2[keep], y2[keep]
    if x1.size == 0:
        return
    ymin = np.minimum(y1, y2)
    ymax = np.maximum(y1, y2)
    slope = (x2 - x1) / (y2 - y1)
    for row in range(height):
        cy = row + 0.5
        active = (ymin <= cy) & (cy < ymax)
        if not active.any():
            continue
        xs = np.sort(x1[active] + (cy - y1[active]) * slope[active])
        for k in range(0, xs.size - 1, 2):
            lo = int(np.ceil(xs[k] - 0.5))
            hi = int(np.ceil(xs[k + 1] - 0.5))  # exclusive
            if hi <= 0 or lo >= width:
                continue
            bits[row, max(lo, 0) : min(hi, width)] ^= True


def rasterize_polygon(points, height: int, width: int, annotation_id: int | None = None) -> InstanceMask:
    """Rasterize one polygon ring (or a list of rings, unioned).

    A pixel is foreground iff its center lies inside under even-odd counting
    with the half-open top-left edge convention.
    """
    rings = points
    if not len(rings):
        raise FormatError("polygon needs at least 3 vertices, got none")
    if np.isscalar(rings[0]) or np.shape(rings[0]) == (2,):
        rings = [rings]
    masks = []
    for ring in rings:
        pts = _ring_vertices(ring)
        bits = np.zeros((height, width), dtype=bool)
        _fill_ring(pts, height, width, bits)
        masks.append(bits)
    combined = np.logical_or.reduce(masks) if masks else np.zeros((height, width), dtype=bool)
    return InstanceMask(bits=combined, annotation_id=annotation_id)


def decode_segmentation(annotation: Annotation, image: ImageInfo) -> InstanceMask:
    """Decode an annotation's segmentation against its parent image dims."""
    seg = annotation.segmentation
    if isinstance(seg, dict):
        mask = decode_rle_payload(seg, annotation_id=annotation.id)
        if (mask.height, mask.width) != (image.height, image.width):
            raise FormatError(
                f"annotation {annotation.id}: RLE size {mask.height}x{mask.width} "
                f"disagrees with image {image.height}x{image.width}"
            )
        return mask
    if isinstance(seg, (list, tuple)) and seg:
        return rasterize_polygon(seg, image.height, image.width, annotation_id=annotation.id)
    raise FormatError(f"annotation {annotation.id}: unsupported segmentation payload {seg!r}")
