"""Target-mask construction for furniture removal.

The target mask is the union of furniture regions attached to the floor,
a nadir cap hiding the tripod and the direct-sunlight patches, dilated to
cover contour fringes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .hdr import RadianceImage, luminance_map
from .sphere import lonlat_to_pixel, pixel_to_lonlat

EIGHT = np.ones((3, 3), dtype=bool)
CAMERA_HEIGHT = 1.6


@dataclass(frozen=True)
class Mask:
    data: np.ndarray
    label: str = ""

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {d.shape}")
        object.__setattr__(self, "data", d.astype(bool))

    @property
    def shape(self):
        return self.data.shape

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.data))

    @property
    def coverage(self) -> float:
        return self.area / self.data.size


def _data(m) -> np.ndarray:
    return np.asarray(getattr(m, "data", m), dtype=bool)


def sunlight_mask(pano: RadianceImage, threshold: float = 2000.0) -> Mask:
    """Pixels brighter than ``threshold`` cd/m^2, opened with a 3x3 square."""
    lum = luminance_map(pano)
    bright = lum > threshold
    return Mask(ndimage.binary_opening(bright, EIGHT), "sunlight")


def tripod_mask(pano_dims, cap_angle: float = math.radians(15)) -> Mask:
    """Full-width band of bottom rows within ``cap_angle`` of the nadir.

    The band has ``floor(h * cap_angle / pi)`` rows.
    """
    if not 0 < cap_angle <= math.pi / 4 + 1e-12:
        raise ValueError("cap angle must lie in (0, pi/4]")
    h, w = pano_dims[:2]
    rows = int(math.floor(h * cap_angle / math.pi + 1e-9))
    data = np.zeros((h, w), dtype=bool)
    if rows:
        data[h - rows:] = True
    return Mask(data, "tripod")


def filter_contours_by_floor(furniture, floor_region) -> Mask:
    """Keep only the 8-connected furniture components touching the floor."""
    f = _data(furniture)
    fl = _data(floor_region)
    if f.shape != fl.shape:
        raise ValueError(f"mask shapes differ: {f.shape} vs {fl.shape}")
    labels, n = ndimage.label(f, structure=EIGHT)
    if n == 0:
        return Mask(f.copy(), "furniture")
    touching = np.unique(labels[fl & f])
    keep = np.isin(labels, touching[touching > 0])
    return Mask(keep, "furniture")


def combine_masks(parts, dilation: int = 0) -> Mask:
    """Pixelwise union followed by dilation with a (2r+1) square."""
    parts = list(parts)
    if not parts:
        raise ValueError("no masks to combine")
    shape = _data(parts[0]).shape
    out = np.zeros(shape, dtype=bool)
    for p in parts:
        d = _data(p)
        if d.shape != shape:
            raise ValueError(f"mask shapes differ: {d.shape} vs {shape}")
        out |= d
    if dilation > 0:
        out = ndimage.binary_dilation(out, np.ones((2 * dilation + 1,) * 2, dtype=bool))
    return Mask(out, "target")


def furniture_from_labels(labels: np.ndarray, class_table: dict[int, str], classes) -> Mask:
    """Binary mask of the label ids whose class names are in ``classes``."""
    wanted = {k for k, name in class_table.items() if name in set(classes)}
    return Mask(np.isin(labels, list(wanted)), "furniture")


# -- layout corners -----------------------------------------------------

def read_corners(path) -> np.ndarray:
    """Corner file: one ``x y`` panorama coordinate per line (``#`` comments allowed)."""
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        rows.append((float(parts[0]), float(parts[1])))
    return np.array(rows, dtype=np.float64).reshape(-1, 2)


def write_corners(path, corners) -> None:
    Path(path).write_text("".join(f"{x:.6f} {y:.6f}\n" for x, y in np.asarray(corners)))


def floor_polygon_from_corners(corners, pano_dims, camera_height: float = CAMERA_HEIGHT,
                               camera_xy=(0.0, 0.0)) -> np.ndarray:
    """Floor corners (panorama pixels) lifted to metric xy on the z=0 plane.

    Only corners below the horizon are floor corners; ceiling corners of
    paired exports are ignored. The result is ordered by azimuth.
    """
    h, w = pano_dims[:2]
    c = np.asarray(corners, dtype=np.float64)
    theta, phi = pixel_to_lonlat(c[:, 0], c[:, 1], h, w)
    floor = phi < 0
    if np.count_nonzero(floor) < 3:
        raise ValueError("layout needs at least three floor corners to close a polygon")
    theta, phi = theta[floor], phi[floor]
    order = np.argsort(theta)
    dist = camera_height / np.tan(-phi[order])
    t = theta[order]
    return np.stack([camera_xy[0] + dist * np.sin(t), camera_xy[1] + dist * np.cos(t)], axis=1)


def corners_from_polygon(polygon, pano_dims, camera_height: float = CAMERA_HEIGHT, camera_xy=(0.0, 0.0),
                         ceiling_height: float | None = None) -> np.ndarray:
    """Inverse of :func:`floor_polygon_from_corners` (plus optional ceiling corners)."""
    h, w = pano_dims[:2]
    p = np.asarray(polygon, dtype=np.float64) - np.asarray(camera_xy)
    theta = np.arctan2(p[:, 0], p[:, 1])
    d = np.hypot(p[:, 0], p[:, 1])
    rows = []
    for th, dd in zip(theta, d):
        if ceiling_height is not None:
            x, y = lonlat_to_pixel(th, math.atan((ceiling_height - camera_height) / dd), h, w)
            rows.append((float(x), float(y)))
        x, y = lonlat_to_pixel(th, -math.atan(camera_height / dd), h, w)
        rows.append((float(x), float(y)))
    return np.array(rows)


def ray_polygon_distance(origin, directions, polygon) -> np.ndarray:
    """Distance along each 2-D ray to its first crossing of the polygon boundary."""
    o = np.asarray(origin, dtype=np.float64)
    d = np.asarray(directions, dtype=np.float64).reshape(-1, 2)
    a = np.asarray(polygon, dtype=np.float64)
    b = np.roll(a, -1, axis=0)
    e = b - a  # (m, 2)
    best = np.full(d.shape[0], np.inf)
    for ai, ei in zip(a, e):
        denom = d[:, 0] * ei[1] - d[:, 1] * ei[0]
        diff = ai - o
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (diff[0] * ei[1] - diff[1] * ei[0]) / denom
            s = (diff[0] * d[:, 1] - diff[1] * d[:, 0]) / denom
        ok = (np.abs(denom) > 1e-15) & (t > 1e-12) & (s >= -1e-12) & (s <= 1 + 1e-12)
        best = np.where(ok & (t < best), t, best)
    return best


def floor_boundary_latitude(polygon, pano_w: int, camera_height: float = CAMERA_HEIGHT, camera_xy=(0.0, 0.0),
                            samples_per_column: int = 1) -> np.ndarray:
    """Latitude of the wall-floor boundary at each column center."""
    n = pano_w * samples_per_column
    x = (np.arange(n) + 0.5) / samples_per_column
    theta = 2 * np.pi * x / pano_w - np.pi
    dist = ray_polygon_distance(camera_xy, np.stack([np.sin(theta), np.cos(theta)], axis=1), polygon)
    if not np.all(np.isfinite(dist)):
        raise ValueError("floor polygon does not enclose the camera")
    phi = -np.arctan(camera_height / dist)
    return phi.reshape(pano_w, samples_per_column).max(axis=1)


def floor_boundary_from_layout(corners, pano_dims, camera_height: float = CAMERA_HEIGHT) -> Mask:
    """Rasterize the floor region of a panorama from layout corners.

    A pixel belongs to the floor when its center lies below the wall-floor
    boundary of its column; the boundary is traced by casting one ray per
    column against the metric floor polygon.
    """
    if isinstance(corners, (str, Path)):
        corners = read_corners(corners)
    h, w = pano_dims[:2]
    polygon = floor_polygon_from_corners(corners, (h, w), camera_height)
    phi_b = floor_boundary_latitude(polygon, w, camera_height)
    _, phi_rows = pixel_to_lonlat(0, np.arange(h) + 0.5, h, w)
    return Mask(phi_rows[:, None] < phi_b[None, :], "floor-boundary")


def boundary_curve(floor: Mask) -> np.ndarray:
    """Row index of the first floor pixel in each column (h when the column has none)."""
    d = _data(floor)
    has = d.any(axis=0)
    first = np.argmax(d, axis=0)
    return np.where(has, first, d.shape[0])
