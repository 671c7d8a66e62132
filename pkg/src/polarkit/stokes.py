"""Linear Stokes decoding and DoLP/AoLP derivation.

Intensities are assumed linear (no gamma); all internal planes are float64.
Only the linear Stokes components (S0, S1, S2) are modelled: the quad
micro-polarizer sensor carries no circular information.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, StructuralError

CANONICAL_ANGLES_DEG = (0, 45, 90, 135)

# Fraction of the plane's max S0 below which a pixel counts as dark.
DEFAULT_DARK_FRACTION = 1e-6


def _as_plane(name: str, values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise StructuralError(f"plane '{name}' must be 2-D, got shape {arr.shape}")
    return arr


def _check_finite(name: str, arr: np.ndarray) -> None:
    bad = ~np.isfinite(arr)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DataError(f"plane '{name}' has a non-finite sample at pixel ({r}, {c})")


def _check_nonnegative(name: str, arr: np.ndarray) -> None:
    neg = arr < 0
    if neg.any():
        r, c = np.argwhere(neg)[0]
        raise DataError(f"plane '{name}' has a negative sample at pixel ({r}, {c})")


@dataclass
class AngularIntensityStack:
    """Four co-registered directional intensity planes (0/45/90/135 degrees)."""

    i0: np.ndarray
    i45: np.ndarray
    i90: np.ndarray
    i135: np.ndarray

    def __post_init__(self):
        planes = {}
        for name in ("i0", "i45", "i90", "i135"):
            arr = _as_plane(name, getattr(self, name))
            setattr(self, name, arr)
            planes[name] = arr
        shapes = {name: p.shape for name, p in planes.items()}
        if len(set(shapes.values())) != 1:
            raise StructuralError(f"intensity planes disagree in shape: {shapes}")
        for name, arr in planes.items():
            _check_finite(name, arr)
            _check_nonnegative(name, arr)

    @property
    def height(self) -> int:
        return self.i0.shape[0]

    @property
    def width(self) -> int:
        return self.i0.shape[1]

    def plane(self, angle_deg: int) -> np.ndarray:
        try:
            return {0: self.i0, 45: self.i45, 90: self.i90, 135: self.i135}[angle_deg]
        except KeyError:
            raise DataError(f"no intensity plane for angle {angle_deg} degrees") from None


@dataclass
class StokesMap:
    """Per-pixel linear Stokes components (S0, S1, S2)."""

    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray

    def __post_init__(self):
        for name in ("s0", "s1", "s2"):
            arr = _as_plane(name, getattr(self, name))
            setattr(self, name, arr)
            _check_finite(name, arr)
        if self.s0.shape != self.s1.shape or self.s0.shape != self.s2.shape:
            raise StructuralError(
                "Stokes planes disagree in shape: "
                f"s0 {self.s0.shape}, s1 {self.s1.shape}, s2 {self.s2.shape}"
            )
        _check_nonnegative("s0", self.s0)

    @property
    def height(self) -> int:
        return self.s0.shape[0]

    @property
    def width(self) -> int:
        return self.s0.shape[1]

    def polarized_magnitude(self) -> np.ndarray:
        return np.hypot(self.s1, self.s2)


@dataclass
class PolarimetricDiagnostics:
    """Bookkeeping emitted alongside a PolarimetricMap.

    The DoLP is clamped to [0, 1], so sensor noise that pushes the raw ratio
    past 1 is invisible in the output; these counters keep it visible.
    """

    dark_threshold: float
    degenerate_count: int
    overrange_count: int
    max_raw_dolp: float

    def as_dict(self) -> dict:
        return {
            "dark_threshold": self.dark_threshold,
            "degenerate_count": self.degenerate_count,
            "overrange_count": self.overrange_count,
            "max_raw_dolp": self.max_raw_dolp,
        }


@dataclass
class PolarimetricMap:
    """Degree (dolp in [0,1]) and angle (aolp in [0,pi)) of linear polarization."""

    dolp: np.ndarray
    aolp: np.ndarray
    diagnostics: PolarimetricDiagnostics | None = field(default=None)

    def __post_init__(self):
        self.dolp = _as_plane("dolp", self.dolp)
        self.aolp = _as_plane("aolp", self.aolp)
        if self.dolp.shape != self.aolp.shape:
            raise StructuralError(
                f"dolp/aolp shape mismatch: {self.dolp.shape} vs {self.aolp.shape}"
            )
        _check_finite("dolp", self.dolp)
        _check_finite("aolp", self.aolp)
        if (self.dolp < 0).any() or (self.dolp > 1).any():
            raise DataError("dolp out of [0, 1]")
        if (self.aolp < 0).any() or (self.aolp >= np.pi).any():
            raise DataError("aolp out of [0, pi)")

    @property
    def height(self) -> int:
        return self.dolp.shape[0]

    @property
    def width(self) -> int:
        return self.dolp.shape[1]


def decode_stokes(stack: AngularIntensityStack) -> StokesMap:
    """Decode a StokesMap from the four directional intensity planes.

    S0 = I0 + I90, S1 = I0 - I90, S2 = I45 - I135.
    """
    return StokesMap(
        s0=stack.i0 + stack.i90,
        s1=stack.i0 - stack.i90,
        s2=stack.i45 - stack.i135,
    )


def synthesize_intensity(stokes: StokesMap, alpha: float, clamp_negative: bool = False) -> np.ndarray:
    """Intensity behind an ideal linear polarizer at angle ``alpha`` (radians).

    I = 0.5*S0 + 0.5*S1*cos(2a) + 0.5*S2*sin(2a).  Left unclamped by default
    so synthesize/decode round trips are exact; set ``clamp_negative`` to
    floor tiny negative excursions from unphysical Stokes inputs.
    """
    if not np.isfinite(alpha):
        raise DataError(f"polarizer angle must be finite, got {alpha!r}")
    out = 0.5 * stokes.s0 + 0.5 * stokes.s1 * np.cos(2.0 * alpha) + 0.5 * stokes.s2 * np.sin(2.0 * alpha)
    if clamp_negative:
        out = np.maximum(out, 0.0)
    return out


def synthesize_stack(stokes: StokesMap, clamp_negative: bool = False) -> AngularIntensityStack:
    """Synthesize the four canonical directional planes from a StokesMap.

    At 0/45/90/135 degrees the cos/sin coefficients are exactly {+1, 0, -1},
    so the planes are formed with those exact values rather than rounded
    trigonometry; this keeps (I0+I90) == (I45+I135) exact whenever the Stokes
    samples are exactly representable.
    """
    i0 = 0.5 * (stokes.s0 + stokes.s1)
    i45 = 0.5 * (stokes.s0 + stokes.s2)
    i90 = 0.5 * (stokes.s0 - stokes.s1)
    i135 = 0.5 * (stokes.s0 - stokes.s2)
    if clamp_negative:
        i0, i45, i90, i135 = (np.maximum(p, 0.0) for p in (i0, i45, i90, i135))
    return AngularIntensityStack(i0=i0, i45=i45, i90=i90, i135=i135)


def dark_threshold(stokes: StokesMap, dark_fraction: float = DEFAULT_DARK_FRACTION) -> float:
    """Absolute S0 level below which a pixel is treated as dark."""
    peak = float(stokes.s0.max()) if stokes.s0.size else 0.0
    return dark_fraction * peak


def compute_polarimetric(
    stokes: StokesMap,
    eps_dark: float | None = None,
    eps_phys: float = 1e-6,
) -> PolarimetricMap:
    """Derive DoLP and AoLP from a StokesMap.

    dolp = sqrt(S1^2 + S2^2) / S0 clamped to [0, 1]; aolp = 0.5*atan2(S2, S1)
    shifted by +pi when negative so it lands in [0, pi).  Pixels with
    S0 < eps_dark get dolp = 0 and aolp = 0.  Raw dolp values exceeding
    1 + eps_phys are counted in the diagnostics before clamping.
    """
    if eps_dark is None:
        eps_dark = dark_threshold(stokes)
    magnitude = stokes.polarized_magnitude()
    # An exactly-zero S0 is always degenerate, even when eps_dark is 0.
    dark = (stokes.s0 < eps_dark) | (stokes.s0 == 0.0)

    raw = np.where(dark, 0.0, magnitude / np.where(dark, 1.0, stokes.s0))

    overrange = raw > 1.0 + eps_phys
    dolp = np.clip(raw, 0.0, 1.0)

    aolp = 0.5 * np.arctan2(stokes.s2, stokes.s1)
    aolp = np.where(aolp < 0.0, aolp + np.pi, aolp)
    aolp = np.where(dark, 0.0, aolp)
    dolp = np.where(dark, 0.0, dolp)

    diagnostics = PolarimetricDiagnostics(
        dark_threshold=float(eps_dark),
        degenerate_count=int(dark.sum()),
        overrange_count=int(overrange.sum()),
        max_raw_dolp=float(raw.max()) if raw.size else 0.0,
    )
    return PolarimetricMap(dolp=dolp, aolp=aolp, diagnostics=diagnostics)


@dataclass
class ResidualSummary:
    mean: float
    max: float
    fraction_above: float
    threshold: float

    def as_dict(self) -> dict:
        return {
            "mean": self.mean,
            "max": self.max,
            "fraction_above": self.fraction_above,
            "threshold": self.threshold,
        }


def consistency_residual(
    stack: AngularIntensityStack, threshold: float = 1e-6
) -> tuple[np.ndarray, ResidualSummary]:
    """Per-pixel |(I0+I90) - (I45+I135)| plus summary statistics.

    Both sums estimate S0, so the residual of any ideally synthesized stack
    is identically zero; on real data it is a cheap sensor sanity signal.
    """
    residual = np.abs((stack.i0 + stack.i90) - (stack.i45 + stack.i135))
    n = residual.size
    summary = ResidualSummary(
        mean=float(residual.mean()) if n else 0.0,
        max=float(residual.max()) if n else 0.0,
        fraction_above=float((residual > threshold).sum() / n) if n else 0.0,
        threshold=threshold,
    )
    return residual, summary


def physical_bound_report(stokes: StokesMap, eps_phys: float = 1e-6) -> dict:
    """How badly sqrt(S1^2+S2^2) <= S0*(1+eps_phys) is violated, if at all."""
    magnitude = stokes.polarized_magnitude()
    limit = stokes.s0 * (1.0 + eps_phys)
    excess = magnitude - limit
    violating = excess > 0
    return {
        "eps_phys": eps_phys,
        "violation_count": int(violating.sum()),
        "max_excess": float(excess.max()) if excess.size else 0.0,
    }
