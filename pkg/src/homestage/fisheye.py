"""Outdoor fisheye post-processing: vignetting, ND color cast, re-projection.

Fisheye pixel geometry: ``alpha = atan2(y - cy, x - cx)`` is the image
azimuth (clockwise on screen, image y points down) and the off-axis angle
``theta`` follows from the radial distance through the lens projection.
``radius`` is the image radius of the 90 degree ring for every projection.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage

from .hdr import RadianceImage, relative_luminance
from .sphere import lonlat_to_dir, pixel_to_lonlat, sample_image

RADIAL = {
    "fisheye-equidistant": "equidistant",
    "fisheye-hemispherical": "hemispherical",
    "fisheye-equisolid": "equisolid",
}
_TAG = {v: k for k, v in RADIAL.items()}


def angle_to_radius(theta, radius: float, projection: str):
    theta = np.asarray(theta, dtype=np.float64)
    if projection == "equidistant":
        return radius * theta / (np.pi / 2)
    if projection == "hemispherical":
        return radius * np.sin(theta)
    if projection == "equisolid":
        return radius * np.sin(theta / 2) / math.sin(math.pi / 4)
    raise ValueError(f"unknown fisheye projection {projection!r}")


def radius_to_angle(r, radius: float, projection: str):
    s = np.asarray(r, dtype=np.float64) / radius
    if projection == "equidistant":
        return s * (np.pi / 2)
    if projection == "hemispherical":
        return np.arcsin(np.clip(s, 0.0, 1.0))
    if projection == "equisolid":
        return 2 * np.arcsin(np.clip(s * math.sin(math.pi / 4), 0.0, 1.0))
    raise ValueError(f"unknown fisheye projection {projection!r}")


@dataclass(frozen=True)
class FisheyeImage:
    image: RadianceImage
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        h, w = self.image.shape
        cx, cy = self.center
        if not (0 <= cx <= w and 0 <= cy <= h):
            raise ValueError("optical center lies outside the image")
        if not self.radius > 0:
            raise ValueError("image radius must be positive")
        if self.image.projection not in RADIAL:
            raise ValueError(f"not a fisheye projection: {self.image.projection!r}")

    @classmethod
    def centered(cls, pixels, projection="fisheye-equidistant", **kw) -> "FisheyeImage":
        img = pixels if isinstance(pixels, RadianceImage) else RadianceImage(pixels, projection=projection, **kw)
        h, w = img.shape
        return cls(img, (w / 2, h / 2), min(h, w) / 2)

    @property
    def projection(self) -> str:
        return RADIAL[self.image.projection]

    def polar(self):
        """Per-pixel radial distance and azimuth of pixel centers."""
        h, w = self.image.shape
        y, x = np.mgrid[0:h, 0:w] + 0.5
        dx = x - self.center[0]
        dy = y - self.center[1]
        return np.hypot(dx, dy), np.arctan2(dy, dx)

    def off_axis(self) -> tuple[np.ndarray, np.ndarray]:
        """Off-axis angle per pixel and an inside-the-circle flag."""
        r, _ = self.polar()
        inside = r <= self.radius
        return radius_to_angle(np.minimum(r, self.radius), self.radius, self.projection), inside

    def with_pixels(self, pixels, projection=None) -> "FisheyeImage":
        tag = self.image.projection if projection is None else projection
        return FisheyeImage(self.image.with_pixels(pixels, projection=tag), self.center, self.radius)

    def pixel_coords(self, theta, alpha):
        r = angle_to_radius(theta, self.radius, self.projection)
        return self.center[0] + r * np.cos(alpha), self.center[1] + r * np.sin(alpha)

    def sample(self, theta, alpha, order: int = 1) -> np.ndarray:
        """Radiance along (off-axis angle, azimuth), rim pixels extended outward."""
        x, y = self.pixel_coords(np.clip(theta, 0, np.pi / 2), alpha)
        return sample_image(self._extended, x, y, order=order)

    @cached_property
    def _extended(self) -> np.ndarray:
        return _extend_outside(self)


def _extend_outside(fe: FisheyeImage) -> np.ndarray:
    # copy each outside pixel from its nearest inside pixel so bilinear lookups near the rim stay unbiased
    _, inside = fe.off_axis()
    if inside.all():
        return fe.image.pixels
    _, idx = ndimage.distance_transform_edt(~inside, return_indices=True)
    return fe.image.pixels[idx[0], idx[1]]


def zero_outside(fe: FisheyeImage, pixels: np.ndarray) -> np.ndarray:
    _, inside = fe.off_axis()
    return np.where(inside[..., None], pixels, 0.0)


@dataclass(frozen=True)
class VignettingModel:
    """Relative lens transmission ``gain`` as a polynomial.

    ``basis="theta"`` evaluates ``sum a_k * theta**k`` (theta in radians);
    ``basis="cos"`` evaluates ``sum a_k * cos(theta)**k``, which expresses
    natural ``cos^4`` falloff exactly.
    """

    coeffs: tuple = (1.0,)
    basis: str = "theta"

    def __post_init__(self):
        if self.basis not in ("theta", "cos"):
            raise ValueError(f"unknown vignetting basis {self.basis!r}")
        if abs(self.gain(0.0) - 1.0) > 1e-9:
            raise ValueError("vignetting gain must equal 1 on the optical axis")
        t = np.linspace(0, np.pi / 2, 1025)
        t = t[:-1] if self.basis == "cos" else t  # cos^k vanishes exactly at the horizon
        if np.any(self.gain(t) <= 0):
            raise ValueError("vignetting gain must stay positive over [0, pi/2]")

    def gain(self, theta):
        x = np.asarray(theta, dtype=np.float64)
        if self.basis == "cos":
            x = np.cos(x)
        return np.polynomial.polynomial.polyval(x, np.asarray(self.coeffs, dtype=np.float64))

    @classmethod
    def cos4(cls) -> "VignettingModel":
        return cls((0.0, 0.0, 0.0, 0.0, 1.0), basis="cos")

    @classmethod
    def load(cls, path) -> "VignettingModel":
        data = json.loads(Path(path).read_text())
        return cls(tuple(data["coeffs"]), data.get("basis", "theta"))


def correct_vignetting(fe: FisheyeImage, model: VignettingModel) -> FisheyeImage:
    """Divide every pixel by the lens gain at its off-axis angle."""
    theta, inside = fe.off_axis()
    g = model.gain(theta)
    factor = np.where(inside & (g > 0), 1.0 / np.where(g > 0, g, 1.0), 0.0)
    return fe.with_pixels(fe.image.pixels * factor[..., None])


@dataclass(frozen=True)
class ColorCorrection:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape == (3,):
            m = np.diag(m)
        if m.shape != (3, 3):
            raise ValueError("color correction must be a 3x3 matrix or 3 per-channel gains")
        if abs(np.linalg.det(m)) < 1e-12 * max(1.0, np.abs(m).max() ** 3):
            raise ValueError("color correction matrix is singular")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_nd(cls, density: float = 3.0, gains=(1.0, 1.0, 1.0)) -> "ColorCorrection":
        """Per-channel gains with the nominal ``10**density`` recovery folded in."""
        return cls(np.diag(np.asarray(gains, dtype=np.float64) * 10.0 ** density))

    @classmethod
    def load(cls, path) -> "ColorCorrection":
        data = json.loads(Path(path).read_text())
        if "density" in data:
            return cls.from_nd(data["density"], data.get("gains", (1, 1, 1)))
        return cls(np.asarray(data["matrix"], dtype=np.float64))

    def inverse(self) -> "ColorCorrection":
        return ColorCorrection(np.linalg.inv(self.matrix))

    def apply(self, pixels: np.ndarray) -> np.ndarray:
        return pixels @ self.matrix.T


def correct_nd_color(fe: FisheyeImage, cc: ColorCorrection) -> FisheyeImage:
    out = cc.apply(fe.image.pixels)
    if np.any(out < 0):
        # a non-diagonal matrix may push dark pixels slightly negative
        out = np.maximum(out, 0.0)
    return fe.with_pixels(out)


def reproject(fe: FisheyeImage, target: str) -> FisheyeImage:
    """Resample to another radial projection with the same center and rim radius."""
    if target not in _TAG:
        raise ValueError(f"unknown fisheye projection {target!r}")
    r, alpha = fe.polar()
    inside = r <= fe.radius
    theta = radius_to_angle(np.minimum(r, fe.radius), fe.radius, target)
    out = fe.sample(theta, alpha)
    out = np.where(inside[..., None], out, 0.0)
    return fe.with_pixels(out, projection=_TAG[target])


def equidistant_to_hemispherical(fe: FisheyeImage, target: str = "hemispherical") -> FisheyeImage:
    """Re-map an equidistant capture (r ~ theta) to ``r = R sin(theta)``.

    ``target="equisolid"`` selects ``r ~ sin(theta/2)`` instead.
    """
    if fe.projection != "equidistant":
        raise ValueError(f"expected an equidistant fisheye, got {fe.image.projection!r}")
    if target not in ("hemispherical", "equisolid"):
        raise ValueError("target must be 'hemispherical' or 'equisolid'")
    return reproject(fe, target)


def hemispherical_to_equidistant(fe: FisheyeImage) -> FisheyeImage:
    if fe.projection != "hemispherical":
        raise ValueError(f"expected a hemispherical fisheye, got {fe.image.projection!r}")
    return reproject(fe, "equidistant")


def hemisphere_integral(fe: FisheyeImage, weight: str = "radiance", n_theta: int = 256, n_alpha: int = 512) -> np.ndarray:
    """Quadrature of radiance (or radiance * cos) over the captured hemisphere.

    Gauss-Legendre in the off-axis angle, uniform in azimuth; returns RGB.
    """
    x, wq = np.polynomial.legendre.leggauss(n_theta)
    theta = (x + 1) * np.pi / 4
    w_theta = wq * np.pi / 4 * np.sin(theta)
    if weight == "cosine":
        w_theta = w_theta * np.cos(theta)
    elif weight != "radiance":
        raise ValueError("weight must be 'radiance' or 'cosine'")
    alpha = (np.arange(n_alpha) + 0.5) * 2 * np.pi / n_alpha
    tt, aa = np.meshgrid(theta, alpha, indexing="ij")
    vals = fe.sample(tt, aa)
    return np.einsum("ij,ijc->c", np.broadcast_to(w_theta[:, None], tt.shape), vals) * (2 * np.pi / n_alpha)


def _leveling_frame(up) -> np.ndarray:
    """Rows e_x, e_y, e_z of the level frame, expressed in camera coordinates."""
    ez = np.asarray(up, dtype=np.float64)
    ez = ez / np.linalg.norm(ez)
    cam_x = np.array([1.0, 0.0, 0.0])
    ex = cam_x - (cam_x @ ez) * ez
    if np.linalg.norm(ex) < 1e-9:
        ex = np.array([0.0, 1.0, 0.0]) - ez[1] * ez
    ex /= np.linalg.norm(ex)
    return np.stack([ex, np.cross(ez, ex), ez])


@dataclass
class LatLongReport:
    irradiance_fisheye: np.ndarray
    irradiance_latlong: np.ndarray

    @property
    def relative_change(self) -> float:
        a = relative_luminance(self.irradiance_fisheye)
        b = relative_luminance(self.irradiance_latlong)
        return float(abs(b - a) / a) if a > 0 else 0.0


def fisheye_to_latlong(fe: FisheyeImage, out_h: int, up_direction=(0.0, 0.0, 1.0), rotation: float = 0.0,
                       lower: str = "horizon", supersample: int = 3):
    """Build an equirectangular environment map from a sky fisheye.

    Column ``c`` of the ``2*out_h`` wide map shows the level-frame image
    azimuth ``2*pi*c/w - rotation``; ``rotation`` aligns the outdoor camera
    with the room. Each output pixel averages ``supersample**2`` lookups. The
    lower hemisphere is a copy of the last row above the horizon
    (``lower="horizon"``) or black (``lower="zero"``).

    Returns ``(RadianceImage, LatLongReport)``; the report compares
    horizontal-plane irradiance before and after.
    """
    if fe.projection != "hemispherical":
        raise ValueError(f"expected a hemispherical fisheye, got {fe.image.projection!r}")
    if out_h < 2:
        raise ValueError("output height must be at least 2")
    if lower not in ("horizon", "zero"):
        raise ValueError("lower must be 'horizon' or 'zero'")
    h, w = out_h, 2 * out_h
    half = (h + 1) // 2
    frame = _leveling_frame(up_direction)
    s = supersample
    offs = (np.arange(s) + 0.5) / s
    acc = np.zeros((half, w, 3))
    cols = np.arange(w)
    rows = np.arange(half)
    for oy in offs:
        for ox in offs:
            lon, lat = pixel_to_lonlat(cols[None, :] + ox, rows[:, None] + oy, h, w)
            lat = np.maximum(np.broadcast_to(lat, (half, w)), 0.0)
            az = (lon + np.pi) - rotation
            level = lonlat_to_dir(np.broadcast_to(np.pi / 2 - az, (half, w)), lat)
            # level-frame vector (cos az cos lat, sin az cos lat, sin lat) mapped into camera coordinates
            cam = level @ frame
            theta = np.arccos(np.clip(cam[..., 2], -1.0, 1.0))
            alpha = np.arctan2(cam[..., 1], cam[..., 0])
            acc += fe.sample(theta, alpha)
    upper = acc / (s * s)
    out = np.zeros((h, w, 3))
    out[:half] = upper
    if lower == "horizon":
        out[half:] = upper[-1]
    img = RadianceImage(out, calibration=fe.image.calibration, k=fe.image.k, projection="equirectangular",
                        meta=dict(fe.image.meta))
    before = _fisheye_irradiance(fe, frame)
    after = latlong_irradiance(img)
    return img, LatLongReport(before, after)


def _fisheye_irradiance(fe: FisheyeImage, frame: np.ndarray) -> np.ndarray:
    # orthographic pixels all subtend cos-weighted solid angle 1/R^2; tilt re-weights by cos(up)/cos(axis)
    r, alpha = fe.polar()
    inside = r <= fe.radius
    theta = radius_to_angle(np.minimum(r, fe.radius), fe.radius, "hemispherical")
    cam = np.stack([np.sin(theta) * np.cos(alpha), np.sin(theta) * np.sin(alpha), np.cos(theta)], axis=-1)
    cos_up = np.maximum(cam @ frame[2], 0.0)
    weight = cos_up / np.maximum(cam[..., 2], 1e-3) / fe.radius ** 2
    return np.einsum("ij,ijc->c", np.where(inside, weight, 0.0), fe.image.pixels)


def latlong_irradiance(img: RadianceImage) -> np.ndarray:
    """Horizontal-plane irradiance from the upper hemisphere of a latlong map."""
    h, w = img.shape
    edges = np.pi / 2 - np.pi * np.arange(h + 1) / h
    top, bot = np.maximum(edges[:-1], 0.0), np.maximum(edges[1:], 0.0)
    # integral of sin(lat) cos(lat) dlat over the row, times the pixel's longitude width
    weight = 0.5 * (np.sin(top) ** 2 - np.sin(bot) ** 2) * (2 * np.pi / w)
    return np.einsum("i,ijc->c", weight, img.pixels)
