"""Synthetic scenes with known answers, for tests and demos."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .layout import FloorPolygon, FurnitureItem, ORIENTATIONS, PlacementRule


def random_floor(rng: np.random.Generator, n_min: int = 3, n_max: int = 9, r_min: float = 1.5,
                 r_max: float = 5.0) -> FloorPolygon:
    """Random star-shaped simple polygon around the origin, which hosts the camera.

    About a third of the edges are labelled as windows.
    """
    n = int(rng.integers(n_min, n_max + 1))
    while True:
        ang = np.sort(rng.uniform(0, 2 * math.pi, n))
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * math.pi]]))
        if gaps.max() < math.pi * 0.95:
            break
    r = rng.uniform(r_min, r_max, n)
    verts = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
    labels = tuple("window" if rng.random() < 0.3 else "wall" for _ in range(n))
    return FloorPolygon(verts, labels, (0.0, 0.0, 1.6))


def random_rules(rng: np.random.Generator, floor: FloorPolygon, count: int):
    """Random items and rules referring to the edges of ``floor``."""
    items, rules = [], []
    for k in range(count):
        item = FurnitureItem(f"item{k}", float(rng.uniform(0.3, 2.2)), float(rng.uniform(0.3, 1.5)),
                             float(rng.uniform(0.3, 1.2)))
        edge = int(rng.integers(len(floor.vertices))) if rng.random() < 0.7 else str(rng.choice(["wall", "window"]))
        if isinstance(edge, str) and edge not in floor.edge_labels:
            edge = "wall" if "wall" in floor.edge_labels else "window"
        rules.append(PlacementRule(item.id, edge, str(rng.choice(ORIENTATIONS)), float(rng.random()),
                                   float(rng.random())))
        items.append(item)
    return items, rules


# -- synthetic box room ------------------------------------------------------------

def wall_texture(p: np.ndarray, name: str) -> np.ndarray:
    """Smooth procedural radiance per surface, in cd/m^2."""
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    if name == "floor":
        # planks along y with a 0.25 m period in x
        base = 40 + 12 * np.cos(2 * np.pi * x / 0.25) + 4 * np.sin(1.3 * y)
        return np.stack([base * 1.1, base * 0.85, base * 0.6], axis=-1)
    if name == "ceiling":
        base = 90 + 5 * np.cos(0.8 * x) * np.cos(0.8 * y)
        return np.stack([base, base, base * 0.97], axis=-1)
    k = int(name[4:]) if name.startswith("wall") else 0
    base = 60 + 8 * np.sin(1.7 * (x + y) + k) + 10 * (z / 2.8)
    tint = np.array([[1.0, 0.95, 0.85], [0.9, 1.0, 0.95], [0.95, 0.9, 1.0], [1.0, 1.0, 1.0]])[k % 4]
    return base[..., None] * tint


def sky_panorama(h: int, w: int, sun_azimuth: float = math.radians(200), sun_elevation: float = math.radians(35),
                 sky: float = 3000.0, sun: float = 1e6, sun_radius: float = math.radians(2.0)):
    """Calibrated synthetic sky: gradient dome, dim ground and a small sun disk."""
    from .hdr import RadianceImage, apply_calibration
    from .sphere import lonlat_to_dir, pano_directions

    d = pano_directions(h, w)
    up = np.clip(d[..., 2], 0, None)
    lum = np.where(d[..., 2] > 0, sky * (0.4 + 0.6 * up), 0.15 * sky)
    s = lonlat_to_dir(sun_azimuth, sun_elevation)
    lum = np.where(d @ s > math.cos(sun_radius), sun, lum)
    rgb = lum[..., None] * np.array([0.9, 1.0, 1.15])
    return apply_calibration(RadianceImage(rgb), 1.0)


def render_room_panorama(floor: FloorPolygon, h: int, w: int, ceiling_height: float = 2.8, window=None, env=None,
                         placed=(), item_color=(30.0, 20.0, 15.0)):
    """Direct camera view of a procedurally textured room.

    Returns ``(pixels, furniture_mask)``; rays leaving through the window
    see ``env``.
    """
    from .layout import placed_mesh
    from .scene import intersect, room_planes
    from .sphere import dir_to_lonlat, lonlat_to_pixel, pano_directions, sample_equirect

    planes, win = room_planes(floor, ceiling_height, window)
    tris = [p.triangles for p in planes] + [placed_mesh(p).triangles() for p in placed]
    owner = np.concatenate([np.full(len(p.triangles), k) for k, p in enumerate(planes)]
                           + [np.full(len(t), -1) for t in tris[len(planes):]])
    all_tris = np.concatenate(tris)
    d = pano_directions(h, w).reshape(-1, 3)
    cam = np.asarray(floor.camera, float)
    o = np.broadcast_to(cam, d.shape).copy()
    t, j = intersect(o, d, all_tris)
    out = np.zeros((h * w, 3))
    hit = j >= 0
    own = np.where(hit, owner[np.maximum(j, 0)], -2)
    for k, p in enumerate(planes):
        sel = own == k
        out[sel] = wall_texture(o[sel] + t[sel, None] * d[sel], p.name)
    furn = own == -1
    out[furn] = np.asarray(item_color)
    miss = ~hit
    if miss.any():
        if env is None:
            raise ValueError("rays escape the room but no environment was given")
        th, ph = dir_to_lonlat(d[miss])
        x, y = lonlat_to_pixel(th, ph, *env.shape)
        out[miss] = sample_equirect(env.pixels, x, y, order=0)
    return out.reshape(h, w, 3), furn.reshape(h, w)


def box_floor(size_x: float = 4.0, size_y: float = 4.0, camera=(0.3, -0.2)) -> FloorPolygon:
    """Rectangular floor centered on the origin; edge 1 (east) is the window wall."""
    hx, hy = size_x / 2, size_y / 2
    v = np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])
    return FloorPolygon(v, ("wall", "window", "wall", "wall"), (camera[0], camera[1], 1.6))


FIXTURE_K = 40.0  # true calibration factor of the synthetic capture


def write_box_room_fixture(directory, height: int = 128, spp: int = 8, render_width: int = 128,
                           seed: int = 0) -> Path:
    """Write a complete staging fixture and return its manifest path.

    The capture is a textured 4 x 4 x 2.8 m room seen from a tripod, with
    a planted sofa, a planted sunlight patch on the floor and an east
    window. It is stored relative (divided by ``FIXTURE_K``); a wall patch
    of known luminance serves as the calibration target.
    """
    from . import imageio
    from .hdr import RadianceImage, relative_luminance
    from .layout import FurnitureItem, PlacedItem
    from .masks import corners_from_polygon, write_corners
    from .rgbe import write_hdr
    from .scene import WindowSpec

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    h, w = height, 2 * height
    floor = box_floor()
    window = WindowSpec("window", width=1.4, height=1.2, sill=0.9)
    sky = sky_panorama(2 * h, 4 * h, sky=1500.0)
    sofa = PlacedItem(FurnitureItem("old_sofa", 1.8, 0.8, 0.8), math.pi, (-0.2, 1.55))
    px, furniture = render_room_panorama(floor, h, w, 2.8, window, sky, [sofa])
    # direct sun patch on the floor south-west of the camera, a pixel rectangle so the
    # 3x3 opening of the sunlight mask keeps it whole
    patch = np.zeros((h, w), bool)
    patch[int(0.73 * h):int(0.81 * h), int(0.11 * w):int(0.19 * w)] = True
    px[patch] = 1e5
    # calibration target: a block of the west wall
    target = np.zeros((h, w), bool)
    ty, tx = int(0.42 * h), int(0.23 * w)
    target[ty:ty + max(2, h // 32), tx:tx + max(2, w // 32)] = True
    measured = float(relative_luminance(px[target]).mean())
    write_hdr(directory / "capture.hdr", RadianceImage(px / FIXTURE_K))
    imageio.write_mask(directory / "target.png", target)
    imageio.write_mask(directory / "furniture.png", furniture)
    write_corners(directory / "corners.txt",
                  corners_from_polygon(floor.vertices, (h, w), 1.6, floor.camera[:2], ceiling_height=2.8))
    write_hdr(directory / "sky.hdr", sky)
    (directory / "floor.json").write_text(json.dumps(floor.to_dict(), indent=2) + "\n")
    rules = {
        "items": [
            {"id": "sofa", "size": [2.0, 0.9], "height": 0.8, "albedo": [0.45, 0.30, 0.22]},
            {"id": "table", "size": [1.0, 0.6], "height": 0.45, "albedo": [0.55, 0.45, 0.35]},
            {"id": "cabinet", "size": [1.2, 0.45], "height": 1.1, "albedo": [0.7, 0.7, 0.68]},
        ],
        "rules": [
            {"item": "sofa", "edge": 2, "orientation": "face-interior", "u": 0.5, "v": 0.0},
            {"item": "table", "edge": 2, "orientation": "face-interior", "u": 0.5, "v": 0.35},
            {"item": "cabinet", "edge": 3, "orientation": "face-interior", "u": 0.3, "v": 0.0},
        ],
    }
    (directory / "rules.json").write_text(json.dumps(rules, indent=2) + "\n")
    manifest = {
        "output": "out",
        "seed": seed,
        "calibrate": {"hdr": "capture.hdr", "target_mask": "target.png", "measured_luminance": measured},
        "mask": {"corners": "corners.txt", "furniture_mask": "furniture.png", "dilation": 2},
        "inpaint": {"view_size": 2 * height},
        "layout": {"floor": "floor.json", "rules": "rules.json"},
        "render": {"env": "sky.hdr", "window": window.to_dict(), "spp": spp, "bounces": 3, "width": render_width,
                   "texel_size": 0.05},
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path

