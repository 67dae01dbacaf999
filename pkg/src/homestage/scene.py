"""Room geometry, textures and lights for relighting a staged panorama.

Every room surface is a planar patch with a rectangular texture frame
``origin + s * eu + t * ev`` (s, t in [0, 1]) and a triangulated outline,
so floors of any simple polygon and walls with window holes share one
representation. Textures are looked up from the inpainted panorama by
casting rays from the camera point through each texel.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import shapely
from shapely.geometry import Polygon

from .hdr import RadianceImage, relative_luminance
from .layout import FloorPolygon, PlacedItem, placed_mesh
from .sphere import dir_to_lonlat, lonlat_to_pixel, sample_equirect

DEFAULT_CEILING = 2.8


@dataclass
class Plane:
    """Planar textured patch.

    ``albedo`` is either a constant RGB triple or a (th, tw, 3) map over
    the texture frame; ``radiance`` keeps the texels as seen by the
    camera (for round-trip checks).
    """

    name: str
    origin: np.ndarray
    eu: np.ndarray
    ev: np.ndarray
    triangles: np.ndarray
    albedo: np.ndarray
    radiance: np.ndarray | None = None
    holes: list = field(default_factory=list)

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.eu, self.ev)
        return n / np.linalg.norm(n)

    @property
    def textured(self) -> bool:
        return np.ndim(self.albedo) == 3

    def texel_points(self, shape) -> np.ndarray:
        th, tw = shape
        s = (np.arange(tw) + 0.5) / tw
        t = (np.arange(th) + 0.5) / th
        return self.origin + s[None, :, None] * self.eu + t[:, None, None] * self.ev

    def uv(self, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rel = p - self.origin
        return rel @ self.eu / (self.eu @ self.eu), rel @ self.ev / (self.ev @ self.ev)


@dataclass(frozen=True)
class Window:
    """Rectangular opening ``origin + s * eu + t * ev``; ``inward`` points into the room."""

    origin: np.ndarray
    eu: np.ndarray
    ev: np.ndarray
    inward: np.ndarray

    @property
    def area(self) -> float:
        return float(np.linalg.norm(np.cross(self.eu, self.ev)))

    @property
    def center(self) -> np.ndarray:
        return self.origin + 0.5 * (self.eu + self.ev)


@dataclass(frozen=True)
class WindowSpec:
    """Window on floor edge ``edge``: centered at fraction ``u`` along it."""

    edge: int | str = "window"
    width: float = 1.2
    height: float = 1.4
    sill: float = 0.8
    u: float = 0.5

    @classmethod
    def from_dict(cls, d: dict) -> "WindowSpec":
        return cls(d.get("edge", "window"), float(d.get("width", 1.2)), float(d.get("height", 1.4)),
                   float(d.get("sill", 0.8)), float(d.get("u", 0.5)))

    def to_dict(self) -> dict:
        return {"edge": self.edge, "width": self.width, "height": self.height, "sill": self.sill, "u": self.u}


@dataclass
class SceneDescription:
    planes: list[Plane]
    env: RadianceImage
    camera: np.ndarray
    window: Window | None = None
    items: list[PlacedItem] = field(default_factory=list)
    item_triangles: list[np.ndarray] = field(default_factory=list)
    env_rotation: float = 0.0
    closed: bool = False
    irradiance: float | None = None
    flags: list[str] = field(default_factory=list)

    def triangles(self):
        """Flattened geometry: vertices (T, 3, 3), owner plane (-1 for items) and constant albedo."""
        tris, owner, albedo = [], [], []
        for k, p in enumerate(self.planes):
            tris.append(p.triangles)
            owner.append(np.full(len(p.triangles), k))
            a = np.asarray(p.albedo) if not p.textured else np.zeros(3)
            albedo.append(np.broadcast_to(a, (len(p.triangles), 3)))
        for it, tri in zip(self.items, self.item_triangles):
            tris.append(tri)
            owner.append(np.full(len(tri), -1))
            albedo.append(np.broadcast_to(np.asarray(it.item.albedo), (len(tri), 3)))
        if not tris:
            return np.zeros((0, 3, 3)), np.zeros(0, dtype=np.int64), np.zeros((0, 3))
        return np.concatenate(tris), np.concatenate(owner), np.concatenate(albedo)


# -- geometry helpers ----------------------------------------------------------

def _triangulate(poly2d: Polygon) -> np.ndarray:
    """Triangles (k, 3, 2) covering a polygon with holes."""
    out = []
    for part in shapely.get_parts(poly2d):
        tris = shapely.constrained_delaunay_triangles(part)
        out += [np.asarray(t.exterior.coords)[:3] for t in shapely.get_parts(tris) if t.area > 1e-12]
    return np.array(out).reshape(-1, 3, 2)


def _lift(tris2d: np.ndarray, origin, eu, ev) -> np.ndarray:
    """Map plane coordinates in meters along unit ``eu``/``ev`` to 3-D."""
    du = eu / np.linalg.norm(eu)
    dv = ev / np.linalg.norm(ev)
    return origin + tris2d[..., :1] * du + tris2d[..., 1:2] * dv


def _rect_plane(name, origin, eu, ev, holes=()) -> Plane:
    lu, lv = float(np.linalg.norm(eu)), float(np.linalg.norm(ev))
    outline = shapely.box(0, 0, lu, lv)
    for a, b, c, d in holes:
        outline = outline.difference(shapely.box(a, c, b, d))
    tris = _lift(_triangulate(outline), np.asarray(origin, float), eu, ev)
    return Plane(name, np.asarray(origin, float), np.asarray(eu, float), np.asarray(ev, float), tris,
                 np.full(3, 0.5), holes=list(holes))


def room_planes(floor: FloorPolygon, ceiling_height: float = DEFAULT_CEILING, window: WindowSpec | None = None):
    """Floor, ceiling and one wall per edge; the window edge's wall gets a hole.

    Returns ``(planes, window)``.
    """
    v = floor.vertices
    x0, y0 = v.min(axis=0)
    x1, y1 = v.max(axis=0)
    poly = Polygon(v)
    tri2 = _triangulate(poly)
    z = np.zeros(tri2.shape[:2] + (1,))
    floor_tris = np.concatenate([tri2, z], axis=-1)
    ceil_tris = np.concatenate([tri2, z + ceiling_height], axis=-1)
    ex, ey = np.array([x1 - x0, 0.0, 0.0]), np.array([0.0, y1 - y0, 0.0])
    planes = [
        Plane("floor", np.array([x0, y0, 0.0]), ex, ey, floor_tris, np.full(3, 0.5)),
        Plane("ceiling", np.array([x0, y0, ceiling_height]), ex, ey, ceil_tris, np.full(3, 0.5)),
    ]
    win_edge = floor.select_edge(window.edge) if window is not None else None
    win = None
    for i in range(len(v)):
        a, d, n, length = floor.edge(i)
        origin = np.array([a[0], a[1], 0.0])
        eu = np.array([d[0] * length, d[1] * length, 0.0])
        ev = np.array([0.0, 0.0, ceiling_height])
        holes = []
        if i == win_edge and window.width > 0 and window.height > 0:
            c = window.u * length
            s0, s1 = c - window.width / 2, c + window.width / 2
            t0, t1 = window.sill, window.sill + window.height
            if s0 < -1e-9 or s1 > length + 1e-9 or t0 < -1e-9 or t1 > ceiling_height + 1e-9:
                raise ValueError("window does not fit inside its wall")
            holes.append((max(s0, 0.0), min(s1, length), max(t0, 0.0), min(t1, ceiling_height)))
            a0, a1, b0, b1 = holes[0]
            win = Window(origin + _d3(d) * a0 + np.array([0, 0, b0]), _d3(d) * (a1 - a0),
                         np.array([0.0, 0.0, b1 - b0]), np.array([n[0], n[1], 0.0]))
        planes.append(_rect_plane(f"wall{i}", origin, eu, ev, holes))
    return planes, win


def _d3(d2) -> np.ndarray:
    return np.array([d2[0], d2[1], 0.0])


# -- ray casting shared with the tracer ----------------------------------------------

def intersect(origins: np.ndarray, dirs: np.ndarray, tris: np.ndarray, chunk: int = 8192):
    """Nearest ray-triangle hit (Moller-Trumbore); returns (t, index) with t=inf on a miss."""
    m = len(origins)
    t_best = np.full(m, np.inf)
    idx = np.full(m, -1, dtype=np.int64)
    if len(tris) == 0 or m == 0:
        return t_best, idx
    v0 = tris[:, 0]
    e1 = tris[:, 1] - v0
    e2 = tris[:, 2] - v0
    for s in range(0, m, chunk):
        o = origins[s:s + chunk, None, :]
        d = dirs[s:s + chunk, None, :]
        p = np.cross(d, e2[None])
        det = np.einsum("mtk,tk->mt", p, e1)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / det
            tv = o - v0[None]
            u = np.einsum("mtk,mtk->mt", tv, p) * inv
            q = np.cross(tv, e1[None])
            w = np.einsum("mtk,mtk->mt", d, q) * inv
            t = np.einsum("tk,mtk->mt", e2, q) * inv
        ok = (np.abs(det) > 1e-14) & (u >= 0) & (w >= 0) & (u + w <= 1) & (t > 1e-9)
        t = np.where(ok, t, np.inf)
        j = np.argmin(t, axis=1)
        tb = t[np.arange(len(j)), j]
        t_best[s:s + chunk] = tb
        idx[s:s + chunk] = np.where(np.isfinite(tb), j, -1)
    return t_best, idx


# -- textures ------------------------------------------------------------------

def _texture_shape(plane: Plane, texel_size: float, max_texels: int) -> tuple[int, int]:
    tw = int(np.clip(math.ceil(np.linalg.norm(plane.eu) / texel_size), 1, max_texels))
    th = int(np.clip(math.ceil(np.linalg.norm(plane.ev) / texel_size), 1, max_texels))
    return th, tw


def _view_texels(pano: np.ndarray, camera: np.ndarray, points: np.ndarray) -> np.ndarray:
    h, w = pano.shape[:2]
    d = points - camera
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    theta, phi = dir_to_lonlat(d)
    x, y = lonlat_to_pixel(theta, phi, h, w)
    return sample_equirect(pano, x, y, order=1)


def window_irradiance(env: RadianceImage, window: Window | None, rotation: float = 0.0, samples: int = 64) -> float:
    """Irradiance (luminance units) arriving on the window plane from outside.

    Without a window the horizontal irradiance on an upward-facing plane is
    used instead.
    """
    outward = -window.inward if window is not None else np.array([0.0, 0.0, 1.0])
    lum = relative_luminance(env.pixels)
    h, w = lum.shape
    ys = np.arange(h) + 0.5
    xs = np.arange(w) + 0.5
    theta = 2 * np.pi * xs / w - np.pi + rotation
    phi = np.pi / 2 - np.pi * ys / h
    d = np.stack(np.broadcast_arrays(np.cos(phi)[:, None] * np.sin(theta)[None], np.cos(phi)[:, None] * np.cos(theta)[None],
                                     np.sin(phi)[:, None]), axis=-1)
    cosw = np.clip(d @ outward, 0, None)
    domega = (2 * np.pi / w) * (np.pi / h) * np.cos(phi)[:, None]
    return float(np.sum(lum * cosw * domega))


def build_scene(floor: FloorPolygon, texture_pano: RadianceImage | None, placed=(), env: RadianceImage | None = None,
                window: WindowSpec | None = None, ceiling_height: float = DEFAULT_CEILING, texel_size: float = 0.02,
                max_texels: int = 512, irradiance: float | None = None, env_rotation: float = 0.0) -> SceneDescription:
    """Assemble room planes, textures, furniture and the environment light.

    Texels are the panorama seen from the camera; albedo is
    ``pi * texel / E`` clamped to [0, 1], with ``E`` the window-plane
    irradiance from the environment unless ``irradiance`` is given.
    Texels hidden from the camera (non-convex rooms) are diffused from
    their visible neighbours and flagged.
    """
    from .inpaint import diffusion_fill

    if env is None:
        raise ValueError("an environment map is required")
    if not env.is_absolute:
        raise ValueError("environment map must be calibrated")
    planes, win = room_planes(floor, ceiling_height, window)
    camera = np.asarray(floor.camera, dtype=np.float64)
    flags: list[str] = []
    E = irradiance if irradiance is not None else window_irradiance(env, win, env_rotation)
    if texture_pano is not None:
        pano = texture_pano.pixels
        all_tris = np.concatenate([p.triangles for p in planes])
        owner = np.concatenate([np.full(len(p.triangles), k) for k, p in enumerate(planes)])
        if E <= 0:
            raise ValueError("estimated scene irradiance is zero; pass irradiance explicitly")
        for k, p in enumerate(planes):
            shape = _texture_shape(p, texel_size, max_texels)
            pts = p.texel_points(shape)
            tex = _view_texels(pano, camera, pts)
            d = pts.reshape(-1, 3) - camera
            dist = np.linalg.norm(d, axis=1)
            t, j = intersect(np.broadcast_to(camera, d.shape).copy(), d / dist[:, None], all_tris)
            hidden = ((t < dist - 1e-6) & (owner[j] != k)).reshape(shape)
            outside = ~_inside_outline(p, pts)
            hidden &= ~outside
            if hidden.any() and not hidden.all():
                tex = diffusion_fill(tex, hidden)
                flags.append(f"{p.name}: {int(hidden.sum())} texels hidden from the camera were filled")
            elif hidden.all():
                tex = np.broadcast_to(pano.reshape(-1, 3).mean(axis=0), tex.shape).copy()
                flags.append(f"{p.name}: no texel visible from the camera; mean color used")
            p.radiance = tex
            p.albedo = np.clip(np.pi * tex / E, 0.0, 1.0)
    tris = [placed_mesh(pi).triangles() for pi in placed]
    closed = win is None
    if window is not None and win is None:
        warnings.warn("window has zero area; the room receives no environment light")
    return SceneDescription(planes, env, camera, win, list(placed), tris, env_rotation, closed, E, flags)


def _inside_outline(p: Plane, pts: np.ndarray) -> np.ndarray:
    """Texel points covered by the plane's triangles (floor polygons are not full rectangles)."""
    s, t = p.uv(pts)
    lu, lv = np.linalg.norm(p.eu), np.linalg.norm(p.ev)
    tri2 = np.stack([*p.uv(p.triangles)], axis=-1) * [lu, lv]
    poly = shapely.union_all(shapely.polygons(tri2))
    return shapely.contains_xy(poly.buffer(1e-9), s * lu, t * lv)


def reproject_textures(scene: SceneDescription, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """The camera's view of the plane textures, and the mask of pixels that hit a plane."""
    from .sphere import pano_directions, sample_image

    d = pano_directions(h, w).reshape(-1, 3)
    tris, owner, _ = scene.triangles()
    o = np.broadcast_to(scene.camera, d.shape).copy()
    t, j = intersect(o, d, tris)
    out = np.zeros((h * w, 3))
    hit = j >= 0
    for k, p in enumerate(scene.planes):
        sel = hit & (owner[np.maximum(j, 0)] == k)
        if not sel.any() or p.radiance is None:
            continue
        pts = o[sel] + t[sel, None] * d[sel]
        s, tt = p.uv(pts)
        th, tw = p.radiance.shape[:2]
        out[sel] = sample_image(p.radiance, s * tw, tt * th)
    return out.reshape(h, w, 3), hit.reshape(h, w)


# -- serialization ---------------------------------------------------------------

def save_scene(path, scene: SceneDescription) -> None:
    """Scene JSON plus one .npy albedo map per textured plane and the env as .hdr."""
    from .rgbe import write_hdr

    path = Path(path)
    base = path.parent
    stem = path.stem
    planes = []
    for k, p in enumerate(scene.planes):
        entry = {"name": p.name, "origin": p.origin.tolist(), "eu": p.eu.tolist(), "ev": p.ev.tolist(),
                 "triangles": p.triangles.tolist(), "holes": [list(hh) for hh in p.holes]}
        if p.textured:
            fn = f"{stem}_{p.name}_albedo.npy"
            np.save(base / fn, p.albedo)
            entry["albedo_map"] = fn
        else:
            entry["albedo"] = np.asarray(p.albedo).tolist()
        planes.append(entry)
    env_fn = f"{stem}_env.hdr"
    write_hdr(base / env_fn, scene.env)
    win = None
    if scene.window is not None:
        w = scene.window
        win = {"origin": w.origin.tolist(), "eu": w.eu.tolist(), "ev": w.ev.tolist(), "inward": w.inward.tolist()}
    doc = {
        "planes": planes, "window": win, "env": env_fn, "env_rotation": scene.env_rotation,
        "camera": scene.camera.tolist(), "closed": scene.closed, "irradiance": scene.irradiance,
        "items": [it.to_dict() for it in scene.items], "item_triangles": [t.tolist() for t in scene.item_triangles],
        "flags": scene.flags,
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_scene(path) -> SceneDescription:
    from .rgbe import read_hdr

    path = Path(path)
    base = path.parent
    doc = json.loads(path.read_text())
    planes = []
    for e in doc["planes"]:
        albedo = np.load(base / e["albedo_map"]) if "albedo_map" in e else np.asarray(e["albedo"], float)
        planes.append(Plane(e["name"], np.asarray(e["origin"], float), np.asarray(e["eu"], float),
                            np.asarray(e["ev"], float), np.asarray(e["triangles"], float).reshape(-1, 3, 3), albedo,
                            holes=[tuple(hh) for hh in e.get("holes", [])]))
    win = None
    if doc.get("window"):
        w = doc["window"]
        win = Window(*(np.asarray(w[k], float) for k in ("origin", "eu", "ev", "inward")))
    items = [PlacedItem.from_dict(d) for d in doc.get("items", [])]
    tris = [np.asarray(t, float).reshape(-1, 3, 3) for t in doc.get("item_triangles", [])]
    return SceneDescription(planes, read_hdr(base / doc["env"]), np.asarray(doc["camera"], float), win, items, tris,
                            float(doc.get("env_rotation", 0.0)), bool(doc.get("closed", False)),
                            doc.get("irradiance"), list(doc.get("flags", [])))


def export_rad(path, scene: SceneDescription) -> None:
    """Write the scene as a Radiance .rad file for cross-checking.

    Surfaces become ``plastic`` polygons with their mean albedo; the
    environment is a ``colorpict`` glow source using an equirectangular
    lookup written next to the scene as ``latlong.cal``.
    """
    from .rgbe import write_hdr

    path = Path(path)
    env_fn = path.with_name(path.stem + "_env.hdr")
    write_hdr(env_fn, scene.env)
    rot = scene.env_rotation
    cal = path.with_name("latlong.cal")
    cal.write_text(
        "{ equirectangular lookup: x east, y north, z up }\n"
        f"rot = {rot!r};\n"
        "lon = atan2(Dx, Dy) - rot;\n"
        "u = 2 * mod(lon / (2 * PI) + 0.5, 1);\n"
        "v = 0.5 + asin(Dz) / PI;\n"
    )
    lines = ["# homestage scene export", f"void colorpict env_pic 7 red green blue {env_fn.name} {cal.name} u v 0 0 0",
             "env_pic glow env_glow 0 0 4 1 1 1 0", "env_glow source env_sky 0 0 4 0 0 1 360", ""]

    def polys(mat, tris):
        for t, tri in enumerate(tris):
            lines.append(f"{mat} polygon {mat}_{t} 0 0 9 " + " ".join(f"{c:.6f}" for c in tri.ravel()))

    for p in scene.planes:
        rgb = np.asarray(p.albedo).reshape(-1, 3).mean(axis=0)
        lines.append(f"void plastic {p.name}_mat 0 0 5 {rgb[0]:.4f} {rgb[1]:.4f} {rgb[2]:.4f} 0 0")
        polys(f"{p.name}_mat", p.triangles)
    for it, tri in zip(scene.items, scene.item_triangles):
        a = it.item.albedo
        lines.append(f"void plastic {it.item.id}_mat 0 0 5 {a[0]:.4f} {a[1]:.4f} {a[2]:.4f} 0 0")
        polys(f"{it.item.id}_mat", tri)
    path.write_text("\n".join(lines) + "\n")
