"""Monte Carlo relighting of a staged room under a calibrated sky.

A vectorized path tracer with Lambertian surfaces. Direct light is
sampled from a 50/50 mixture of the window portal and an importance table
over the environment texels, combined with cosine-weighted BSDF sampling
by the balance heuristic. Random numbers come from a counter-based hash of
(seed, pixel, sample, dimension), so output does not depend on how the
work is batched.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .hdr import RadianceImage, relative_luminance
from .scene import SceneDescription, intersect
from .sphere import sample_image

log = logging.getLogger(__name__)

_G = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_DIMS_PER_BOUNCE = 8
_OFFSET = 1e-6


@dataclass(frozen=True)
class RenderSettings:
    samples_per_pixel: int = 256
    max_bounces: int = 4
    seed: int = 0
    width: int = 2048
    height: int = 1024
    batch_rays: int = 1 << 15

    def __post_init__(self):
        if self.samples_per_pixel < 1:
            raise ValueError("samples_per_pixel must be at least 1")
        if self.max_bounces < 1:
            raise ValueError("max_bounces must be at least 1")
        if self.width != 2 * self.height:
            raise ValueError("output panorama must be 2:1")

    def to_dict(self) -> dict:
        return {"samples_per_pixel": self.samples_per_pixel, "max_bounces": self.max_bounces, "seed": self.seed,
                "width": self.width, "height": self.height}


# -- counter-based random numbers ------------------------------------------------

def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def stream_keys(seed: int, pixel: np.ndarray, sample: np.ndarray) -> np.ndarray:
    """One 64-bit key per (pixel, sample) pair."""
    with np.errstate(over="ignore"):
        s = _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * _G + np.uint64(1))
        k = _mix(s ^ (pixel.astype(np.uint64) * _G))
        return _mix(k + sample.astype(np.uint64) * _M2)


def uniforms(keys: np.ndarray, dim: int) -> np.ndarray:
    """Uniform numbers in [0, 1) for dimension ``dim`` of each stream."""
    with np.errstate(over="ignore"):
        z = _mix(keys ^ (np.uint64(dim + 1) * _G))
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))


# -- environment -------------------------------------------------------------------

class EnvironmentLight:
    """Equirectangular sky with nearest-texel lookup and a texel importance table."""

    def __init__(self, env: RadianceImage, rotation: float = 0.0):
        self.pixels = env.pixels
        self.rotation = float(rotation)
        h, w = env.shape
        self.h, self.w = h, w
        self.dtheta = 2 * math.pi / w
        phi_edges = math.pi / 2 - math.pi * np.arange(h + 1) / h
        self.sin_edges = np.sin(phi_edges)
        self.row_omega = self.dtheta * (self.sin_edges[:-1] - self.sin_edges[1:])
        weight = relative_luminance(env.pixels) * self.row_omega[:, None]
        self.total = float(weight.sum())
        self.pmf = (weight / self.total).ravel() if self.total > 0 else np.zeros(h * w)
        self.cdf = np.cumsum(self.pmf)
        if self.total > 0:
            self.cdf /= self.cdf[-1]

    @property
    def samplable(self) -> bool:
        return self.total > 0

    def _index(self, d: np.ndarray):
        theta = np.arctan2(d[:, 0], d[:, 1]) - self.rotation
        phi = np.arcsin(np.clip(d[:, 2], -1.0, 1.0))
        col = np.floor((theta + math.pi) / self.dtheta).astype(np.int64) % self.w
        row = np.clip(np.floor((math.pi / 2 - phi) / math.pi * self.h).astype(np.int64), 0, self.h - 1)
        return row, col

    def radiance(self, d: np.ndarray) -> np.ndarray:
        row, col = self._index(d)
        return self.pixels[row, col]

    def pdf(self, d: np.ndarray) -> np.ndarray:
        row, col = self._index(d)
        return self.pmf[row * self.w + col] / self.row_omega[row]

    def sample(self, u0, u1, u2) -> np.ndarray:
        i = np.minimum(np.searchsorted(self.cdf, u0, side="right"), self.h * self.w - 1)
        row, col = i // self.w, i % self.w
        theta = -math.pi + (col + u1) * self.dtheta + self.rotation
        s = self.sin_edges[row] - u2 * (self.sin_edges[row] - self.sin_edges[row + 1])
        c = np.sqrt(np.clip(1 - s * s, 0, None))
        return np.stack([c * np.sin(theta), c * np.cos(theta), s], axis=1)


# -- sampling helpers ----------------------------------------------------------------

def _onb(n: np.ndarray):
    sign = np.where(n[:, 2] >= 0, 1.0, -1.0)
    a = -1.0 / (sign + n[:, 2])
    b = n[:, 0] * n[:, 1] * a
    t1 = np.stack([1 + sign * n[:, 0] ** 2 * a, sign * b, -sign * n[:, 0]], axis=1)
    t2 = np.stack([b, sign + n[:, 1] ** 2 * a, -n[:, 1]], axis=1)
    return t1, t2


def cosine_sample(n: np.ndarray, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    t1, t2 = _onb(n)
    r = np.sqrt(u1)
    ph = 2 * math.pi * u2
    z = np.sqrt(np.clip(1 - u1, 0, None))
    return (r * np.cos(ph))[:, None] * t1 + (r * np.sin(ph))[:, None] * t2 + z[:, None] * n


class _Portal:
    def __init__(self, window):
        self.o = window.origin
        self.eu = window.eu
        self.ev = window.ev
        self.n = window.inward / np.linalg.norm(window.inward)
        self.area = window.area

    def usable(self, x: np.ndarray) -> np.ndarray:
        return (x - self.o) @ self.n > 1e-9

    def sample(self, x, u1, u2):
        q = self.o + u1[:, None] * self.eu + u2[:, None] * self.ev
        v = q - x
        dist = np.linalg.norm(v, axis=1)
        return v / dist[:, None]

    def pdf(self, x, d):
        denom = d @ self.n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.o - x) @ self.n) / denom
            p = x + t[:, None] * d
            rel = p - self.o
            s = rel @ self.eu / (self.eu @ self.eu)
            r = rel @ self.ev / (self.ev @ self.ev)
            ok = (t > 0) & (s >= 0) & (s <= 1) & (r >= 0) & (r <= 1) & (np.abs(denom) > 1e-12)
            pdf = np.where(ok, t * t / (self.area * np.abs(denom)), 0.0)
        return np.nan_to_num(pdf)


class _Geometry:
    def __init__(self, scene: SceneDescription):
        self.tris, self.owner, self.albedo_const = scene.triangles()
        if len(self.tris):
            n = np.cross(self.tris[:, 1] - self.tris[:, 0], self.tris[:, 2] - self.tris[:, 0])
            self.normals = n / np.linalg.norm(n, axis=1, keepdims=True)
        else:
            self.normals = np.zeros((0, 3))
        self.planes = scene.planes

    def hit(self, o, d):
        return intersect(o, d, self.tris)

    def albedo(self, idx: np.ndarray, p: np.ndarray) -> np.ndarray:
        out = self.albedo_const[idx].copy()
        own = self.owner[idx]
        for k, pl in enumerate(self.planes):
            if not pl.textured:
                continue
            sel = own == k
            if sel.any():
                s, t = pl.uv(p[sel])
                th, tw = pl.albedo.shape[:2]
                out[sel] = sample_image(pl.albedo, s * tw, t * th)
        return out


# -- the integrator ---------------------------------------------------------------

def _camera_dirs(pixel: np.ndarray, keys: np.ndarray, h: int, w: int) -> np.ndarray:
    y = pixel // w
    x = pixel % w
    px = x + uniforms(keys, 0)
    py = y + uniforms(keys, 1)
    theta = 2 * math.pi * px / w - math.pi
    phi = math.pi / 2 - math.pi * py / h
    c = np.cos(phi)
    return np.stack([c * np.sin(theta), c * np.cos(theta), np.sin(phi)], axis=1)


def _light_pdf(x, d, env: EnvironmentLight, portal, c_portal):
    p = (1 - c_portal) * env.pdf(d)
    if portal is not None:
        p = p + c_portal * portal.pdf(x, d)
    return p


def trace(scene: SceneDescription, origins: np.ndarray, dirs: np.ndarray, keys: np.ndarray, max_bounces: int,
          geom: _Geometry | None = None, env: EnvironmentLight | None = None) -> np.ndarray:
    """Radiance carried back along each ray; one path per (origin, dir, key)."""
    geom = geom or _Geometry(scene)
    env = env or EnvironmentLight(scene.env, scene.env_rotation)
    portal = _Portal(scene.window) if scene.window is not None else None
    m = len(origins)
    L = np.zeros((m, 3))
    beta = np.ones((m, 3))
    ray = np.arange(m)
    o, d = origins.copy(), dirs.copy()
    prev_x = o.copy()
    prev_pb = np.zeros(m)
    for seg in range(max_bounces + 1):
        if ray.size == 0:
            break
        t, j = geom.hit(o, d)
        esc = j < 0
        if esc.any():
            le = env.radiance(d[esc])
            if seg == 0:
                wgt = np.ones(np.count_nonzero(esc))
            else:
                x = prev_x[esc]
                cp = _portal_coef(portal, x, env)
                pl = _light_pdf(x, d[esc], env, portal, cp) if env.samplable else np.zeros(len(x))
                pb = prev_pb[esc]
                wgt = pb / (pb + pl)
            np.add.at(L, ray[esc], beta[esc] * le * wgt[:, None])
        keep = ~esc
        if seg == max_bounces or not keep.any():
            break
        ray, o, d, t, j, beta = ray[keep], o[keep], d[keep], t[keep], j[keep], beta[keep]
        k = keys[ray]
        x = o + t[:, None] * d
        ng = geom.normals[j]
        n = np.where((np.einsum("ij,ij->i", ng, d) < 0)[:, None], ng, -ng)
        x = x + n * _OFFSET
        a = geom.albedo(j, x)
        base = 2 + seg * _DIMS_PER_BOUNCE
        # next-event estimation
        if env.samplable:
            cp = _portal_coef(portal, x, env)
            pick_portal = uniforms(k, base) < cp
            u1, u2, u3 = uniforms(k, base + 1), uniforms(k, base + 2), uniforms(k, base + 3)
            wl = env.sample(u1, u2, u3)
            if portal is not None and pick_portal.any():
                wl[pick_portal] = portal.sample(x[pick_portal], u1[pick_portal], u2[pick_portal])
            cos_l = np.einsum("ij,ij->i", wl, n)
            pl = _light_pdf(x, wl, env, portal, cp)
            good = (cos_l > 0) & (pl > 0)
            if good.any():
                gi = np.flatnonzero(good)
                ts, _ = geom.hit(x[gi], wl[gi])
                vis = gi[np.isinf(ts)]
                if vis.size:
                    le = env.radiance(wl[vis])
                    pb = cos_l[vis] / math.pi
                    contrib = beta[vis] * a[vis] / math.pi * le * (cos_l[vis] / (pl[vis] + pb))[:, None]
                    np.add.at(L, ray[vis], contrib)
        # continue the path by cosine sampling
        wb = cosine_sample(n, uniforms(k, base + 4), uniforms(k, base + 5))
        beta = beta * a
        prev_pb = np.clip(np.einsum("ij,ij->i", wb, n), 0, None) / math.pi
        prev_x = x
        o, d = x, wb
        alive = np.any(beta > 0, axis=1) & (prev_pb > 0)
        ray, o, d, beta, prev_pb, prev_x = ray[alive], o[alive], d[alive], beta[alive], prev_pb[alive], prev_x[alive]
    return L


def _portal_coef(portal, x, env):
    if portal is None:
        return np.zeros(len(x))
    return np.where(portal.usable(x), 0.5, 0.0)


def render_panorama(scene: SceneDescription, settings: RenderSettings = RenderSettings()) -> RadianceImage:
    """Equirectangular HDR panorama seen from the scene camera.

    Values are in the environment's units (cd/m^2 for a calibrated sky).
    """
    h, w, spp = settings.height, settings.width, settings.samples_per_pixel
    k = scene.env.k if scene.env.is_absolute else None
    meta = {"renderer": "homestage", **settings.to_dict()}
    calib = "absolute" if scene.env.is_absolute else "relative"
    if scene.closed:
        warnings.warn("scene has no window or other opening to the environment; output is black")
        return RadianceImage(np.zeros((h, w, 3)), calib, k, "equirectangular", meta)
    geom = _Geometry(scene)
    env = EnvironmentLight(scene.env, scene.env_rotation)
    out = np.zeros((h * w, 3))
    per_batch = max(1, settings.batch_rays // spp)
    samples = np.arange(spp)
    for start in range(0, h * w, per_batch):
        pix = np.arange(start, min(start + per_batch, h * w))
        pixel = np.repeat(pix, spp)
        sample = np.tile(samples, len(pix))
        keys = stream_keys(settings.seed, pixel, sample)
        d = _camera_dirs(pixel, keys, h, w)
        o = np.broadcast_to(scene.camera, d.shape).copy()
        L = trace(scene, o, d, keys, settings.max_bounces, geom, env)
        out[pix] = L.reshape(len(pix), spp, 3).mean(axis=1)
    return RadianceImage(np.clip(out.reshape(h, w, 3), 0, None), calib, k, "equirectangular", meta)


# -- display -----------------------------------------------------------------------

def tone_map_preview(pano: RadianceImage, exposure: float = 1.0, gamma: float = 2.2) -> np.ndarray:
    """8-bit display image from a global Reinhard curve on luminance.

    ``mapped = x / (1 + x)`` with ``x = exposure * luminance``; colors keep
    their chromaticity and are clipped after the curve.
    """
    if not exposure > 0:
        raise ValueError("exposure must be positive")
    px = pano.pixels if isinstance(pano, RadianceImage) else np.asarray(pano, dtype=np.float64)
    lum = relative_luminance(px)
    x = exposure * lum
    mapped = x / (1 + x)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(lum > 0, mapped / lum, 0.0)
    rgb = np.clip(px * scale[..., None], 0, 1) ** (1 / gamma)
    return np.round(rgb * 255).astype(np.uint8)


def auto_exposure(pano: RadianceImage, key: float = 0.18) -> float:
    """Exposure mapping the log-average luminance to ``key``."""
    lum = relative_luminance(pano.pixels)
    pos = lum[lum > 0]
    if pos.size == 0:
        return 1.0
    return float(key / math.exp(np.mean(np.log(pos))))
