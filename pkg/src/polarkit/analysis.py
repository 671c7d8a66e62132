"""Physical scene analysis: reflection localization, per-instance glass
statistics, and detection difference sets.

These produce the structured facts the text-generation stage consumes; every
threshold that shapes a fact is recorded into the scene record's provenance
by the pipeline, so generated text stays auditable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coco import InstanceMask
from .errors import DataError, StructuralError
from .stokes import PolarimetricMap

DEFAULT_TAU_DOLP = 0.3
DEFAULT_TAU_RGB = 0.1
DEFAULT_OPENING_RADIUS = 2
DEFAULT_TAU_IOU = 0.5

_ROW_NAMES = ("top", "middle", "bottom")
_COL_NAMES = ("left", "center", "right")


@dataclass
class Detection:
    label: str
    bbox: tuple[float, float, float, float]  # x, y, w, h in pixels
    confidence: float = 1.0

    def __post_init__(self):
        self.bbox = tuple(float(v) for v in self.bbox)
        if len(self.bbox) != 4 or self.bbox[2] <= 0 or self.bbox[3] <= 0:
            raise DataError(f"detection bbox must have positive extent, got {self.bbox}")
        if not 0.0 <= self.confidence <= 1.0:
            raise DataError(f"detection confidence must be in [0, 1], got {self.confidence}")

    def as_dict(self) -> dict:
        return {"label": self.label, "bbox": list(self.bbox), "confidence": self.confidence}

    @staticmethod
    def from_dict(payload: dict) -> "Detection":
        return Detection(
            label=str(payload["label"]),
            bbox=tuple(payload["bbox"]),
            confidence=float(payload.get("confidence", 1.0)),
        )


@dataclass
class ReflectionEvidence:
    mask: np.ndarray  # (H, W) bool, post-opening
    mean_dolp_inside: float
    mean_rgb_difference_inside: float
    coverage_fraction: float

    def as_dict(self) -> dict:
        return {
            "mean_dolp_inside": self.mean_dolp_inside,
            "mean_rgb_difference_inside": self.mean_rgb_difference_inside,
            "coverage_fraction": self.coverage_fraction,
        }


@dataclass
class GlassInstanceStats:
    annotation_id: int | None
    area: int
    bbox: tuple[float, float, float, float]
    relative_position: str
    dolp_mean: float
    dolp_std: float
    dolp_p10: float
    dolp_p90: float

    def __post_init__(self):
        if self.area <= 0:
            raise DataError(f"glass instance area must be > 0, got {self.area}")
        # The mean may sit outside the percentile span for skewed masks; the
        # percentiles themselves must still be ordered.
        if self.dolp_p10 > self.dolp_p90:
            raise DataError(
                f"dolp percentiles out of order: p10={self.dolp_p10} > p90={self.dolp_p90}"
            )

    def as_dict(self) -> dict:
        return {
            "annotation_id": self.annotation_id,
            "area": self.area,
            "bbox": list(self.bbox),
            "relative_position": self.relative_position,
            "dolp_mean": self.dolp_mean,
            "dolp_std": self.dolp_std,
            "dolp_p10": self.dolp_p10,
            "dolp_p90": self.dolp_p90,
        }

    @staticmethod
    def from_dict(payload: dict) -> "GlassInstanceStats":
        return GlassInstanceStats(
            annotation_id=payload.get("annotation_id"),
            area=int(payload["area"]),
            bbox=tuple(payload["bbox"]),
            relative_position=str(payload["relative_position"]),
            dolp_mean=float(payload["dolp_mean"]),
            dolp_std=float(payload["dolp_std"]),
            dolp_p10=float(payload["dolp_p10"]),
            dolp_p90=float(payload["dolp_p90"]),
        )


@dataclass
class SpuriousObjectSet:
    """Detections present only with reflections vs. present in both."""

    spurious: list[Detection]
    persistent: list[Detection]

    def as_dict(self) -> dict:
        return {
            "spurious": [d.as_dict() for d in self.spurious],
            "persistent": [d.as_dict() for d in self.persistent],
        }


def mean_abs_rgb_difference(rgb_a: np.ndarray, rgb_b: np.ndarray) -> np.ndarray:
    """Per-pixel mean absolute channel difference of two (3, H, W) images."""
    a = np.asarray(rgb_a, dtype=np.float64)
    b = np.asarray(rgb_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 3 or a.shape[0] != 3:
        raise StructuralError(f"expected matching (3, H, W) rgb images, got {a.shape} and {b.shape}")
    return np.abs(a - b).mean(axis=0)


def threshold_evidence_mask(
    polar: PolarimetricMap,
    rgb_with: np.ndarray,
    rgb_without: np.ndarray,
    tau_dolp: float = DEFAULT_TAU_DOLP,
    tau_rgb: float = DEFAULT_TAU_RGB,
) -> np.ndarray:
    """Pre-opening reflection mask: high DoLP AND substantial RGB difference.

    Both cues are required; either alone is insufficient evidence.
    """
    diff = mean_abs_rgb_difference(rgb_with, rgb_without)
    if diff.shape != polar.dolp.shape:
        raise StructuralError(
            f"rgb images {diff.shape} and polarimetric map {polar.dolp.shape} disagree in shape"
        )
    return (polar.dolp > tau_dolp) & (diff > tau_rgb)


def binary_opening(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological opening with a (2r+1)^2 square structuring element.

    Outside the frame counts as background for both erosion and dilation.
    """
    if radius <= 0:
        return mask.copy()
    eroded = _erode(mask, radius)
    return _dilate(eroded, radius)


def _shifts(radius: int):
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            yield dr, dc


def _shifted(mask: np.ndarray, dr: int, dc: int, fill: bool) -> np.ndarray:
    out = np.full_like(mask, fill)
    h, w = mask.shape
    rs = slice(max(dr, 0), min(h + dr, h))
    cs = slice(max(dc, 0), min(w + dc, w))
    rs_src = slice(max(-dr, 0), min(h - dr, h))
    cs_src = slice(max(-dc, 0), min(w - dc, w))
    out[rs, cs] = mask[rs_src, cs_src]
    return out


def _erode(mask: np.ndarray, radius: int) -> np.ndarray:
    out = np.ones_like(mask)
    for dr, dc in _shifts(radius):
        out &= _shifted(mask, dr, dc, fill=False)
    return out


def _dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    out = np.zeros_like(mask)
    for dr, dc in _shifts(radius):
        out |= _shifted(mask, dr, dc, fill=False)
    return out


def localize_reflection(
    polar: PolarimetricMap,
    rgb_with: np.ndarray,
    rgb_without: np.ndarray,
    tau_dolp: float = DEFAULT_TAU_DOLP,
    tau_rgb: float = DEFAULT_TAU_RGB,
    opening_radius: int = DEFAULT_OPENING_RADIUS,
) -> ReflectionEvidence:
    """Localize likely reflection regions and summarize the evidence inside.

    The thresholded mask is cleaned with a morphological opening to suppress
    single-pixel speckle; statistics are zeros when the final mask is empty.
    """
    raw = threshold_evidence_mask(polar, rgb_with, rgb_without, tau_dolp, tau_rgb)
    mask = binary_opening(raw, opening_radius)
    if mask.any():
        diff = mean_abs_rgb_difference(rgb_with, rgb_without)
        mean_dolp = float(polar.dolp[mask].mean())
        mean_diff = float(diff[mask].mean())
    else:
        mean_dolp = 0.0
        mean_diff = 0.0
    return ReflectionEvidence(
        mask=mask,
        mean_dolp_inside=mean_dolp,
        mean_rgb_difference_inside=mean_diff,
        coverage_fraction=float(mask.sum() / mask.size),
    )


def grid_cell_name(cx: float, cy: float, width: int, height: int) -> str:
    """3x3 positional taxonomy cell for a point, ties broken toward center."""

    def _index(t: float) -> int:
        # t in units of thirds; exact 1.0/2.0 sits on a boundary -> center.
        if t == 1.0 or t == 2.0:
            return 1
        return min(max(int(t), 0), 2)

    col = _index(3.0 * cx / width)
    row = _index(3.0 * cy / height)
    if row == 1 and col == 1:
        return "center"
    return f"{_ROW_NAMES[row]}-{_COL_NAMES[col]}"


def mask_centroid(bits: np.ndarray) -> tuple[float, float]:
    rows, cols = np.nonzero(bits)
    return float(cols.mean() + 0.5), float(rows.mean() + 0.5)


def glass_stats(mask: InstanceMask, polar: PolarimetricMap) -> GlassInstanceStats:
    """DoLP statistics and spatial attributes of one glass instance."""
    if (mask.height, mask.width) != (polar.height, polar.width):
        raise StructuralError(
            f"mask {mask.height}x{mask.width} and map {polar.height}x{polar.width} disagree in shape"
        )
    if not mask.bits.any():
        raise DataError(f"annotation {mask.annotation_id}: empty mask has no statistics")
    values = polar.dolp[mask.bits]
    rows, cols = np.nonzero(mask.bits)
    x0, x1 = int(cols.min()), int(cols.max())
    y0, y1 = int(rows.min()), int(rows.max())
    cx, cy = mask_centroid(mask.bits)
    return GlassInstanceStats(
        annotation_id=mask.annotation_id,
        area=mask.area,
        bbox=(float(x0), float(y0), float(x1 - x0 + 1), float(y1 - y0 + 1)),
        relative_position=grid_cell_name(cx, cy, polar.width, polar.height),
        dolp_mean=float(values.mean()),
        dolp_std=float(values.std()),
        dolp_p10=float(np.percentile(values, 10)),
        dolp_p90=float(np.percentile(values, 90)),
    )


def bbox_iou(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def diff_detections(
    with_refl: list[Detection],
    without_refl: list[Detection],
    tau_iou: float = DEFAULT_TAU_IOU,
) -> SpuriousObjectSet:
    """Split the with-reflection detections into spurious vs. persistent.

    Greedy bipartite matching by descending IoU among same-label pairs with
    IoU >= tau_iou; with-reflection entries left unmatched are spurious.
    """
    pairs = []
    for i, da in enumerate(with_refl):
        for j, db in enumerate(without_refl):
            if da.label != db.label:
                continue
            iou = bbox_iou(da.bbox, db.bbox)
            if iou >= tau_iou:
                pairs.append((iou, i, j))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))

    matched_with: set[int] = set()
    matched_without: set[int] = set()
    for iou, i, j in pairs:
        if i in matched_with or j in matched_without:
            continue
        matched_with.add(i)
        matched_without.add(j)

    spurious = [d for i, d in enumerate(with_refl) if i not in matched_with]
    persistent = [d for i, d in enumerate(with_refl) if i in matched_with]
    return SpuriousObjectSet(spurious=spurious, persistent=persistent)
