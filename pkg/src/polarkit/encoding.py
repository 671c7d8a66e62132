"""Three-channel polarization encodings and channel normalization.

Four variants are supported; channel order is part of the on-disk contract:

* ``decoupled``     -- [P, sin(2*phi), cos(2*phi)]
* ``s0_stokes``     -- [S0, S1, S2]
* ``dolp_coupled``  -- [P, P*cos(2*phi), P*sin(2*phi)]
* ``s0_dolp_aolp``  -- [S0, P, phi]

The decoupled form trades the raw angle's wrap-around discontinuity at
phi = 0/pi for a continuous point on the unit circle, which is the property
the boundary-gap helper below makes measurable.  Note the dolp_coupled
variant orders cos before sin while decoupled orders sin before cos; both
orders are preserved verbatim.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, StructuralError, UsageError
from .stokes import PolarimetricMap, StokesMap, dark_threshold

VARIANTS = ("decoupled", "s0_stokes", "dolp_coupled", "s0_dolp_aolp")

CHANNEL_NAMES = {
    "decoupled": ("dolp", "sin2phi", "cos2phi"),
    "s0_stokes": ("s0", "s1", "s2"),
    "dolp_coupled": ("dolp", "dolp_cos2phi", "dolp_sin2phi"),
    "s0_dolp_aolp": ("s0", "dolp", "aolp"),
}


def validate_variant(variant: str) -> str:
    if variant not in VARIANTS:
        raise UsageError(f"unknown encoding variant {variant!r}; expected one of {VARIANTS}")
    return variant


@dataclass
class EncodedInput:
    """A 3-channel neural-ready polarization representation."""

    channels: np.ndarray  # (3, H, W) float64
    variant: str
    channel_stats: np.ndarray  # (3, 2): per-channel mean, std
    # (scale, shift) applied per channel by channel_normalize, if any.
    transform: np.ndarray | None = None

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim != 3 or self.channels.shape[0] != 3:
            raise StructuralError(f"expected (3, H, W) channels, got {self.channels.shape}")
        validate_variant(self.variant)
        self.channel_stats = np.asarray(self.channel_stats, dtype=np.float64)
        if self.channel_stats.shape != (3, 2):
            raise StructuralError(f"channel_stats must be (3, 2), got {self.channel_stats.shape}")
        if not np.isfinite(self.channel_stats).all():
            raise DataError("channel_stats contain non-finite values")

    @property
    def c1(self) -> np.ndarray:
        return self.channels[0]

    @property
    def c2(self) -> np.ndarray:
        return self.channels[1]

    @property
    def c3(self) -> np.ndarray:
        return self.channels[2]

    @property
    def height(self) -> int:
        return self.channels.shape[1]

    @property
    def width(self) -> int:
        return self.channels.shape[2]

    @property
    def channel_names(self) -> tuple[str, str, str]:
        return CHANNEL_NAMES[self.variant]


def _stats(channels: np.ndarray) -> np.ndarray:
    return np.stack([channels.mean(axis=(1, 2)), channels.std(axis=(1, 2))], axis=1)


def channel_triple(dolp, aolp, s0, variant: str):
    """Channel values for the given variant; works on scalars and arrays.

    s1/s2 for ``s0_stokes`` are reconstructed as s0*P*cos(2*phi) and
    s0*P*sin(2*phi), which is exact for maps produced by compute_polarimetric.
    """
    validate_variant(variant)
    dolp = np.asarray(dolp, dtype=np.float64)
    aolp = np.asarray(aolp, dtype=np.float64)
    s0 = np.asarray(s0, dtype=np.float64)
    sin2 = np.sin(2.0 * aolp)
    cos2 = np.cos(2.0 * aolp)
    if variant == "decoupled":
        triple = dolp, sin2, cos2
    elif variant == "dolp_coupled":
        triple = dolp, dolp * cos2, dolp * sin2
    elif variant == "s0_dolp_aolp":
        triple = s0, dolp, aolp
    else:
        triple = s0, s0 * dolp * cos2, s0 * dolp * sin2
    return tuple(np.broadcast_arrays(*triple))


def encode(stokes: StokesMap, polar: PolarimetricMap, variant: str = "decoupled") -> EncodedInput:
    """Build the 3-channel encoding from co-registered Stokes and DoLP/AoLP maps.

    Dark pixels arrive here with (dolp, aolp) = (0, 0), so the decoupled form
    emits (sin, cos) = (0, 1) for them without special casing.
    """
    validate_variant(variant)
    if (stokes.height, stokes.width) != (polar.height, polar.width):
        raise StructuralError(
            f"stokes {stokes.height}x{stokes.width} and polarimetric "
            f"{polar.height}x{polar.width} maps disagree in shape"
        )
    if variant == "s0_stokes":
        c1, c2, c3 = stokes.s0, stokes.s1, stokes.s2
    else:
        c1, c2, c3 = channel_triple(polar.dolp, polar.aolp, stokes.s0, variant)
    channels = np.stack([c1, c2, c3]).astype(np.float64)
    return EncodedInput(channels=channels, variant=variant, channel_stats=_stats(channels))


def verify_normalized_stokes_identity(
    stokes: StokesMap, encoded: EncodedInput, eps_dark: float | None = None
) -> float:
    """Max deviation of the decoupled angular channels from the normalized
    Stokes components s2/|s| and s1/|s|, over pixels with |s| > eps_dark."""
    if encoded.variant != "decoupled":
        raise UsageError("identity check applies to the decoupled variant only")
    if (stokes.height, stokes.width) != (encoded.height, encoded.width):
        raise StructuralError("stokes map and encoded input disagree in shape")
    if eps_dark is None:
        eps_dark = dark_threshold(stokes)
    magnitude = stokes.polarized_magnitude()
    live = magnitude > eps_dark
    if not live.any():
        return 0.0
    m = magnitude[live]
    dev_sin = np.abs(encoded.c2[live] - stokes.s2[live] / m)
    dev_cos = np.abs(encoded.c3[live] - stokes.s1[live] / m)
    return float(max(dev_sin.max(), dev_cos.max()))


def boundary_continuity_gap(
    phi_a: float, phi_b: float, variant: str, dolp: float = 1.0, s0: float = 1.0
) -> float:
    """Euclidean channel-space distance between two angles at fixed DoLP.

    Large gaps for nearly identical physical states (phi near 0 vs near pi)
    expose a variant's wrap-around discontinuity.
    """
    a = np.array(channel_triple(dolp, phi_a, s0, variant), dtype=np.float64)
    b = np.array(channel_triple(dolp, phi_b, s0, variant), dtype=np.float64)
    return float(np.linalg.norm(a - b))


def channel_normalize(
    encoded: EncodedInput, target_stats, mean_only: bool = False
) -> EncodedInput:
    """Affinely rescale each channel to the target (mean, std).

    target_stats is (3, 2) rows of (mean, std).  Channels with zero variance
    are a hard error unless ``mean_only`` is set, in which case only the
    means are shifted.  The applied per-channel (scale, shift) is recorded on
    the result.
    """
    target = np.asarray(target_stats, dtype=np.float64)
    if target.shape != (3, 2):
        raise UsageError(f"target_stats must be (3, 2), got {target.shape}")
    if not mean_only and (target[:, 1] <= 0).any():
        raise UsageError("target channel standard deviations must be > 0")

    current = _stats(encoded.channels)
    scales = np.ones(3)
    shifts = np.zeros(3)
    for ch in range(3):
        mean_in, std_in = current[ch]
        mean_t, std_t = target[ch]
        if mean_only:
            scales[ch] = 1.0
            shifts[ch] = mean_t - mean_in
            continue
        if std_in == 0.0:
            raise DataError(
                f"channel {ch} ({encoded.channel_names[ch]}) has zero variance; "
                "use mean_only to shift it"
            )
        scales[ch] = std_t / std_in
        shifts[ch] = mean_t - scales[ch] * mean_in

    channels = encoded.channels * scales[:, None, None] + shifts[:, None, None]
    return EncodedInput(
        channels=channels,
        variant=encoded.variant,
        channel_stats=_stats(channels),
        transform=np.stack([scales, shifts], axis=1),
    )
