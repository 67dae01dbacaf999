"""HDR assembly and photometric calibration.

Exposure brackets are merged into linear relative radiance, then scaled to
absolute luminance (cd/m^2) using a measured target (``k1``) and, for the
outdoor camera, a fixed cross-camera constant (``k2``).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

# Rec.709 / sRGB primaries luminance weights; they sum to exactly 1.
LUMINANCE_WEIGHTS = (0.2127, 0.7151, 0.0722)

PROJECTIONS = (
    "equirectangular",
    "fisheye-equidistant",
    "fisheye-hemispherical",
    "fisheye-equisolid",
    "perspective",
)

# The camera ladder used for both indoor and outdoor captures.
SHUTTER_LADDER = (4.0, 1.0, 1 / 4, 1 / 15, 1 / 60, 1 / 250, 1 / 1000, 1 / 4000, 1 / 8000)


class CalibrationError(ValueError):
    """Raised when a calibration step gets degenerate or uncalibrated input."""


@dataclass(frozen=True)
class RadianceImage:
    """Linear RGB radiance grid with calibration and projection tags.

    ``k`` is the accumulated scale applied to reach absolute units; it is
    ``None`` while the image is still relative.
    """

    pixels: np.ndarray
    calibration: str = "relative"
    k: float | None = None
    projection: str = "equirectangular"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = np.repeat(px[..., None], 3, axis=2)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected an h x w x 3 grid, got shape {px.shape}")
        if not np.all(np.isfinite(px)) or np.any(px < 0):
            raise ValueError("radiance values must be finite and non-negative")
        if self.calibration not in ("relative", "absolute"):
            raise ValueError(f"unknown calibration state {self.calibration!r}")
        if self.calibration == "absolute" and (self.k is None or self.k <= 0):
            raise ValueError("absolute images must record a positive k")
        if self.projection not in PROJECTIONS:
            raise ValueError(f"unknown projection {self.projection!r}")
        object.__setattr__(self, "pixels", px)

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[:2]

    @property
    def is_absolute(self) -> bool:
        return self.calibration == "absolute"

    def with_pixels(self, pixels: np.ndarray, **changes) -> "RadianceImage":
        return replace(self, pixels=pixels, **changes)


@dataclass(frozen=True)
class CalibrationFactor:
    """Scale factors for indoor (``k1``) and cross-camera (``k2``) calibration."""

    k1: float = 1.0
    k2: float = 1.0
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.k1 > 0 and self.k2 > 0) or not np.isfinite(self.k1 * self.k2):
            raise CalibrationError(f"calibration factors must be positive, got k1={self.k1}, k2={self.k2}")

    @property
    def scale(self) -> float:
        return self.k1 * self.k2

    def combine(self, other: "CalibrationFactor") -> "CalibrationFactor":
        return CalibrationFactor(self.k1 * other.k1, self.k2 * other.k2, {**self.source, **other.source})


@dataclass
class ExposureBracket:
    """LDR frames of one scene with their shutter times.

    ``response`` optionally maps pixel values to relative exposure per
    channel as a table ``(values, exposures)`` with ``values`` in [0, 1]
    and ``exposures`` of shape ``(n, 3)``; ``None`` means a linear sensor.
    """

    images: list
    shutter_speeds: Sequence[float]
    response: tuple[np.ndarray, np.ndarray] | None = None

    def __post_init__(self):
        self.images = [np.asarray(im, dtype=np.float64) for im in self.images]
        if not self.images:
            raise ValueError("bracket has no images")
        if len(self.images) != len(self.shutter_speeds):
            raise ValueError("need exactly one shutter speed per image")
        shapes = {im.shape for im in self.images}
        if len(shapes) != 1:
            raise ValueError(f"bracket images differ in dimensions: {sorted(shapes)}")
        if any(not (t > 0) for t in self.shutter_speeds):
            raise ValueError("shutter speeds must be strictly positive")
        if self.response is not None:
            values, exposures = (np.asarray(a, dtype=np.float64) for a in self.response)
            if exposures.ndim == 1:
                exposures = np.repeat(exposures[:, None], 3, axis=1)
            if np.any(np.diff(values) <= 0) or np.any(np.diff(exposures, axis=0) < 0):
                raise ValueError("response curve must be monotone non-decreasing")
            self.response = (values, exposures)

    def linearize(self, image: np.ndarray) -> np.ndarray:
        """Apply the inverse response, mapping pixel values to relative exposure."""
        if self.response is None:
            return image
        values, exposures = self.response
        if image.ndim == 2:
            return np.interp(image, values, exposures[:, 0])
        return np.stack([np.interp(image[..., c], values, exposures[:, c]) for c in range(image.shape[-1])], axis=-1)


class MergeResult(NamedTuple):
    image: RadianceImage
    saturated: np.ndarray


def hat_weight(v: np.ndarray, floor: float = 0.005) -> np.ndarray:
    """``min(v, 1 - v)``, zero within ``floor`` of either end of the range."""
    w = np.minimum(v, 1.0 - v)
    return np.where((v > floor) & (v < 1.0 - floor), w, 0.0)


def merge_exposures(bracket: ExposureBracket, floor: float = 0.005, **meta) -> MergeResult:
    """Merge an exposure bracket into relative radiance.

    Parameters
    ----------
    bracket : ExposureBracket
        Frames with values in [0, 1] and their shutter times in seconds.
    floor : float
        Samples within ``floor`` of 0 or 1 get zero weight.

    Returns
    -------
    MergeResult
        The merged image and a boolean ``saturated`` grid marking channels
        with no usable sample. Those are filled with the shortest exposure
        estimate when over-exposed everywhere, the longest when
        under-exposed everywhere.
    """
    times = np.asarray(bracket.shutter_speeds, dtype=np.float64)
    num = np.zeros_like(bracket.images[0])
    den = np.zeros_like(num)
    for im, dt in zip(bracket.images, times):
        w = hat_weight(im, floor)
        num += w * bracket.linearize(im) / dt
        den += w
    saturated = den <= 0

    radiance = np.divide(num, den, out=np.zeros_like(num), where=~saturated)
    if saturated.any():
        short = int(np.argmin(times))
        long = int(np.argmax(times))
        over = bracket.images[short] >= 0.5
        est_short = bracket.linearize(bracket.images[short]) / times[short]
        est_long = bracket.linearize(bracket.images[long]) / times[long]
        radiance = np.where(saturated, np.where(over, est_short, est_long), radiance)

    if num.ndim == 2:
        radiance = radiance[..., None]
        saturated = saturated[..., None]
    img = RadianceImage(np.broadcast_to(radiance, radiance.shape[:2] + (3,)).copy(), meta=dict(meta))
    return MergeResult(img, np.broadcast_to(saturated, img.pixels.shape).any(axis=2))


def relative_luminance(pixels: np.ndarray) -> np.ndarray:
    """Weighted RGB sum, without any calibration check."""
    px = np.asarray(pixels, dtype=np.float64)
    r, g, b = LUMINANCE_WEIGHTS
    return r * px[..., 0] + g * px[..., 1] + b * px[..., 2]


def _region_statistic(lum: np.ndarray, mask: np.ndarray, statistic: str) -> float:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != lum.shape:
        raise CalibrationError(f"mask shape {mask.shape} does not match image {lum.shape}")
    if not mask.any():
        raise CalibrationError("target mask selects no pixels")
    values = lum[mask]
    if statistic == "mean":
        return float(np.mean(values))
    if statistic == "median":
        return float(np.median(values))
    raise ValueError(f"unknown statistic {statistic!r}")


def compute_k1(hdr: RadianceImage, target, measured_luminance: float, statistic: str = "mean") -> CalibrationFactor:
    """Ratio of measured to displayed luminance over the target region."""
    target = getattr(target, "data", target)
    displayed = _region_statistic(relative_luminance(hdr.pixels), target, statistic)
    if displayed <= 0:
        raise CalibrationError("target region has zero displayed luminance")
    if not measured_luminance > 0:
        raise CalibrationError("measured luminance must be positive")
    k1 = measured_luminance / displayed
    return CalibrationFactor(k1=k1, source={"measured": float(measured_luminance), "displayed": displayed,
                                            "pixels": int(np.count_nonzero(target)), "statistic": statistic})


def compute_k2(hdr_a: RadianceImage, patch_a, hdr_b: RadianceImage, patch_b, statistic: str = "mean") -> CalibrationFactor:
    """Constant that scales camera ``b`` so its patch matches camera ``a``."""
    mean_a = _region_statistic(relative_luminance(hdr_a.pixels), getattr(patch_a, "data", patch_a), statistic)
    mean_b = _region_statistic(relative_luminance(hdr_b.pixels), getattr(patch_b, "data", patch_b), statistic)
    if mean_a <= 0 or mean_b <= 0:
        raise CalibrationError("calibration patch has zero mean luminance")
    return CalibrationFactor(k2=mean_a / mean_b, source={"patch_a": mean_a, "patch_b": mean_b})


def apply_calibration(hdr: RadianceImage, k) -> RadianceImage:
    """Scale every channel by ``k`` and mark the image absolute.

    ``k`` may be a float or a :class:`CalibrationFactor` (its ``k1*k2`` is
    used). Repeated application composes multiplicatively.
    """
    scale = k.scale if isinstance(k, CalibrationFactor) else float(k)
    if not scale > 0 or not np.isfinite(scale):
        raise CalibrationError(f"calibration factor must be positive, got {scale}")
    total = scale * (hdr.k if hdr.k is not None else 1.0)
    return hdr.with_pixels(hdr.pixels * scale, calibration="absolute", k=total)


def luminance_map(hdr: RadianceImage) -> np.ndarray:
    """Per-pixel luminance in cd/m^2 of a calibrated image."""
    if not hdr.is_absolute:
        raise CalibrationError("image is relative; run apply_calibration first")
    return relative_luminance(hdr.pixels)


# Piecewise-linear ramp: dark blue -> blue -> cyan -> green -> yellow -> red.
_RAMP = np.array([
    [0.00, 0.0, 0.0, 0.5],
    [0.15, 0.0, 0.0, 1.0],
    [0.40, 0.0, 1.0, 1.0],
    [0.60, 0.0, 1.0, 0.0],
    [0.80, 1.0, 1.0, 0.0],
    [1.00, 1.0, 0.0, 0.0],
])


def false_color(lum: np.ndarray, lo: float = 50.0, hi: float = 5000.0) -> np.ndarray:
    """Map luminance onto a log-scaled color ramp between ``lo`` and ``hi``.

    Returns an ``uint8`` RGB image; values outside the range are clamped.
    """
    if not (lo > 0 and hi > lo):
        raise ValueError(f"need 0 < lo < hi, got lo={lo}, hi={hi}")
    lum = np.asarray(lum, dtype=np.float64)
    t = (np.log10(np.maximum(lum, lo)) - np.log10(lo)) / (np.log10(hi) - np.log10(lo))
    t = np.clip(t, 0.0, 1.0)
    rgb = np.stack([np.interp(t, _RAMP[:, 0], _RAMP[:, c]) for c in (1, 2, 3)], axis=-1)
    return np.round(rgb * 255).astype(np.uint8)


def false_color_legend(lo: float, hi: float, n: int = 5) -> list[tuple[float, tuple[int, int, int]]]:
    """Legend ticks (luminance, color) spaced evenly in log luminance."""
    ticks = np.logspace(np.log10(lo), np.log10(hi), n)
    colors = false_color(ticks, lo, hi)
    return [(float(t), tuple(int(c) for c in col)) for t, col in zip(ticks, colors)]
