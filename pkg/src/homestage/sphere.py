"""Equirectangular <-> perspective mapping and panorama re-stitching.

World frame: x east, y north, z up. Longitude ``theta`` is measured from +y
towards +x (so increasing panorama column turns right), latitude ``phi``
from the horizon towards +z. A panorama of width W and height H has
column ``x`` (continuous, pixel i covering [i, i+1)) at
``theta = 2*pi*x/W - pi`` and row ``y`` at ``phi = pi/2 - pi*y/H``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def lonlat_to_dir(theta, phi) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    c = np.cos(phi)
    return np.stack([c * np.sin(theta), c * np.cos(theta), np.sin(phi)], axis=-1)


def dir_to_lonlat(d) -> tuple[np.ndarray, np.ndarray]:
    d = np.asarray(d, dtype=np.float64)
    n = np.linalg.norm(d, axis=-1)
    theta = np.arctan2(d[..., 0], d[..., 1])
    phi = np.arcsin(np.clip(d[..., 2] / n, -1.0, 1.0))
    return theta, phi


def pixel_to_lonlat(x, y, h: int, w: int):
    return 2 * np.pi * np.asarray(x) / w - np.pi, np.pi / 2 - np.pi * np.asarray(y) / h


def lonlat_to_pixel(theta, phi, h: int, w: int):
    return (np.asarray(theta) + np.pi) * w / (2 * np.pi), (np.pi / 2 - np.asarray(phi)) * h / np.pi


def pano_directions(h: int, w: int) -> np.ndarray:
    """Unit directions through every pixel center, shape (h, w, 3)."""
    xs = np.arange(w) + 0.5
    ys = np.arange(h) + 0.5
    theta, phi = pixel_to_lonlat(xs[None, :], ys[:, None], h, w)
    return lonlat_to_dir(np.broadcast_to(theta, (h, w)), np.broadcast_to(phi, (h, w)))


def check_equirect(img: np.ndarray) -> None:
    h, w = img.shape[:2]
    if w != 2 * h:
        raise ValueError(f"equirectangular panorama must be 2:1, got {w}x{h}")


def sample_equirect(img: np.ndarray, x: np.ndarray, y: np.ndarray, order: int = 1) -> np.ndarray:
    """Sample at continuous pixel coordinates with horizontal wrap.

    ``order=1`` is bilinear, ``order=0`` nearest (for masks and labels).
    """
    h, w = img.shape[:2]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if order == 0:
        xi = np.floor(x).astype(np.int64) % w
        yi = np.clip(np.floor(y).astype(np.int64), 0, h - 1)
        return img[yi, xi]
    fx = x - 0.5
    fy = np.clip(y - 0.5, 0.0, h - 1.0)
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.minimum(np.floor(fy).astype(np.int64), h - 2) if h > 1 else np.zeros_like(fy, dtype=np.int64)
    ax = fx - x0
    ay = fy - y0
    x0w = x0 % w
    x1w = (x0 + 1) % w
    y1 = np.minimum(y0 + 1, h - 1)
    if img.ndim == 3:
        ax = ax[..., None]
        ay = ay[..., None]
    top = img[y0, x0w] * (1 - ax) + img[y0, x1w] * ax
    bot = img[y1, x0w] * (1 - ax) + img[y1, x1w] * ax
    return top * (1 - ay) + bot * ay


def sample_image(img: np.ndarray, x: np.ndarray, y: np.ndarray, order: int = 1) -> np.ndarray:
    """Sample a planar image at continuous coordinates, clamping to the border."""
    h, w = img.shape[:2]
    if order == 0:
        xi = np.clip(np.floor(x).astype(np.int64), 0, w - 1)
        yi = np.clip(np.floor(y).astype(np.int64), 0, h - 1)
        return img[yi, xi]
    fx = np.clip(np.asarray(x, dtype=np.float64) - 0.5, 0.0, w - 1.0)
    fy = np.clip(np.asarray(y, dtype=np.float64) - 0.5, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(fx).astype(np.int64), max(w - 2, 0))
    y0 = np.minimum(np.floor(fy).astype(np.int64), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    ax = fx - x0
    ay = fy - y0
    if img.ndim == 3:
        ax = ax[..., None]
        ay = ay[..., None]
    top = img[y0, x0] * (1 - ax) + img[y0, x1] * ax
    bot = img[y1, x0] * (1 - ax) + img[y1, x1] * ax
    return top * (1 - ay) + bot * ay


@dataclass(frozen=True)
class ViewWindow:
    """One pinhole crop: horizontal field of view, view center and size."""

    fov: float
    theta: float
    phi: float
    h: int
    w: int

    def __post_init__(self):
        if not 0 < self.fov < math.pi:
            raise ValueError(f"fov must lie in (0, pi), got {self.fov}")
        if not -math.pi < self.theta < math.pi:
            raise ValueError(f"theta must lie in (-pi, pi), got {self.theta}")
        if not -math.pi / 2 < self.phi < math.pi / 2:
            raise ValueError(f"phi must lie in (-pi/2, pi/2), got {self.phi}")
        if self.h < 1 or self.w < 1:
            raise ValueError("view size must be at least 1x1")

    @property
    def fov_y(self) -> float:
        return 2 * math.atan(math.tan(self.fov / 2) * self.h / self.w)

    def basis(self) -> np.ndarray:
        """Rows: right, up, forward."""
        f = lonlat_to_dir(self.theta, self.phi)
        r = np.array([math.cos(self.theta), -math.sin(self.theta), 0.0])
        u = np.cross(r, f)
        return np.stack([r, u, f])

    def directions(self, x=None, y=None) -> np.ndarray:
        """World directions through continuous view coordinates (default: pixel centers)."""
        if x is None:
            x, y = np.meshgrid(np.arange(self.w) + 0.5, np.arange(self.h) + 0.5)
        t = math.tan(self.fov / 2)
        sx = (2 * np.asarray(x) / self.w - 1) * t
        sy = (1 - 2 * np.asarray(y) / self.h) * t * self.h / self.w
        r, u, f = self.basis()
        d = sx[..., None] * r + sy[..., None] * u + f
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def project(self, d: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Continuous view coordinates of directions, plus an in-frustum flag."""
        r, u, f = self.basis()
        cx, cy, cz = d @ r, d @ u, d @ f
        t = math.tan(self.fov / 2)
        ty = t * self.h / self.w
        with np.errstate(divide="ignore", invalid="ignore"):
            sx = cx / cz
            sy = cy / cz
        inside = (cz > 0) & (np.abs(sx) <= t * (1 + 1e-12)) & (np.abs(sy) <= ty * (1 + 1e-12))
        x = (sx / t + 1) * self.w / 2
        y = (1 - sy / ty) * self.h / 2
        return x, y, inside

    def to_dict(self) -> dict:
        return {"fov_deg": math.degrees(self.fov), "theta_deg": math.degrees(self.theta),
                "phi_deg": math.degrees(self.phi), "h": self.h, "w": self.w}

    @classmethod
    def from_dict(cls, d: dict) -> "ViewWindow":
        if "fov_deg" in d:
            return cls(math.radians(d["fov_deg"]), math.radians(d["theta_deg"]), math.radians(d["phi_deg"]),
                       int(d["h"]), int(d["w"]))
        return cls(float(d["fov"]), float(d["theta"]), float(d["phi"]), int(d["h"]), int(d["w"]))


@dataclass
class View:
    window: ViewWindow
    image: np.ndarray


def equirect_to_perspective(pano: np.ndarray, win: ViewWindow, order: int = 1) -> np.ndarray:
    """Render the pinhole view ``win`` of an equirectangular panorama."""
    pano = np.asarray(pano)
    check_equirect(pano)
    h, w = pano.shape[:2]
    theta, phi = dir_to_lonlat(win.directions())
    x, y = lonlat_to_pixel(theta, phi, h, w)
    out = sample_equirect(pano, x, y, order=order)
    return out.astype(pano.dtype) if order == 0 else out


def make_views(pano: np.ndarray, windows, order: int = 1) -> list[View]:
    return [View(win, equirect_to_perspective(pano, win, order)) for win in windows]


def assign_views(windows, h: int, w: int) -> np.ndarray:
    """Index of the nearest containing view for each pano pixel, -1 where uncovered."""
    d = pano_directions(h, w)
    best = np.full((h, w), -1, dtype=np.int64)
    best_cos = np.full((h, w), -np.inf)
    for i, win in enumerate(windows):
        _, _, inside = win.project(d)
        cz = d @ win.basis()[2]
        take = inside & (cz > best_cos)
        best[take] = i
        best_cos[take] = cz[take]
    return best


def perspective_to_equirect(views, pano_h: int, pano_w: int, order: int = 1):
    """Stitch views back into a panorama.

    Each pano pixel is taken from the containing view whose center is
    angularly nearest. Returns ``(pano, coverage)``; uncovered pixels are 0.
    """
    views = list(views)
    if not views:
        raise ValueError("no views to stitch")
    sample = views[0].image
    shape = (pano_h, pano_w) + sample.shape[2:]
    out = np.zeros(shape, dtype=sample.dtype if order == 0 else np.float64)
    owner = assign_views([v.window for v in views], pano_h, pano_w)
    d = pano_directions(pano_h, pano_w)
    for i, view in enumerate(views):
        sel = owner == i
        if not sel.any():
            continue
        x, y, _ = view.window.project(d[sel])
        out[sel] = sample_image(view.image, x, y, order=order)
    return out, owner >= 0


def coverage_mask(windows, h: int, w: int) -> np.ndarray:
    return assign_views(windows, h, w) >= 0


def _angle(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.arccos(np.clip(a @ b, -1.0, 1.0)))


def plan_views(fov: float = math.pi / 2, overlap: float = 0.2, size: int = 512, check_res: int = 128) -> list[ViewWindow]:
    """Ring-based set of square views covering the sphere.

    Latitude rings are spaced evenly between two polar caps so that
    neighbouring view centers are at most ``fov * (1 - overlap)`` apart;
    each ring gets the fewest columns meeting the same bound. Columns are
    added until a rasterized coverage check passes.
    """
    if not 0 <= overlap < 0.5:
        raise ValueError("overlap must lie in [0, 0.5)")
    step = fov * (1 - overlap)
    pole = math.pi / 2 - 1e-9
    m = max(2, math.ceil(math.pi / step - 1e-9))
    lats = [-math.pi / 2 + k * math.pi / m for k in range(1, m)]
    counts = []
    for lat in lats:
        n = 1
        while True:
            a = lonlat_to_dir(0.0, lat)
            b = lonlat_to_dir(2 * math.pi / n, lat)
            if n >= 3 and _angle(a, b) <= step + 1e-9:
                break
            n += 1
        counts.append(n)

    def build():
        # caps share the azimuth of their neighbouring ring so square edges line up
        wins = [ViewWindow(fov, -math.pi + math.pi / counts[0], -pole, size, size)]
        for lat, n in zip(lats, counts):
            # half-step offset keeps every center inside the open interval (-pi, pi)
            for j in range(n):
                wins.append(ViewWindow(fov, -math.pi + (j + 0.5) * 2 * math.pi / n, lat, size, size))
        wins.append(ViewWindow(fov, -math.pi + math.pi / counts[-1], pole, size, size))
        return wins

    wins = build()
    for _ in range(64):
        if coverage_mask(wins, check_res, 2 * check_res).all():
            break
        counts = [c + 1 for c in counts]
        wins = build()
    return wins


def save_plan(path, windows) -> None:
    Path(path).write_text(json.dumps({"views": [w.to_dict() for w in windows]}, indent=2))


def load_plan(path) -> list[ViewWindow]:
    data = json.loads(Path(path).read_text())
    items = data["views"] if isinstance(data, dict) else data
    return [ViewWindow.from_dict(d) for d in items]
