"""Rule-based furniture placement on a metric floor polygon.

Each item is a rectangle in its own frame (front along +y) and lands in
the room through one rigid transform ``x' = R_z(theta) x + t``. A rule pins
the item to a floor edge; ``u`` slides it along the edge between the two
flush extremes and ``v`` pushes it from the edge toward the opposite
boundary along the inward edge normal.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from shapely.geometry import Point, Polygon

CAMERA_HEIGHT = 1.6
ORIENTATIONS = ("face-window", "face-interior", "align-edge")
CLEARANCE_WARNING = 0.5
TOUCH_TOLERANCE = 1e-9
_EPS = 1e-9


class InfeasiblePlacement(ValueError):
    """The item does not fit where its rule puts it."""


_QUARTER = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))


def cos_sin(theta: float) -> tuple[float, float]:
    """``(cos, sin)``, exact at multiples of a quarter turn."""
    q = theta / (math.pi / 2)
    r = round(q)
    if abs(q - r) < 1e-12:
        return _QUARTER[int(r) % 4]
    return math.cos(theta), math.sin(theta)


def rotation_z(theta: float) -> np.ndarray:
    c, s = cos_sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def apply_rigid(points, theta: float, t) -> np.ndarray:
    """Rotate points about z by ``theta`` then translate by ``(t_x, t_y, 0)``.

    Accepts (n, 2) or (n, 3) arrays; z is passed through unchanged.
    """
    p = np.asarray(points, dtype=np.float64)
    c, s = cos_sin(theta)
    out = p.copy()
    out[..., 0] = c * p[..., 0] - s * p[..., 1] + t[0]
    out[..., 1] = s * p[..., 0] + c * p[..., 1] + t[1]
    return out


def compose_rigid(theta2: float, t2, theta1: float, t1) -> tuple[float, np.ndarray]:
    """Parameters of ``apply(theta2, t2) o apply(theta1, t1)``."""
    c, s = cos_sin(theta2)
    t = np.array([c * t1[0] - s * t1[1] + t2[0], s * t1[0] + c * t1[1] + t2[1]])
    return theta1 + theta2, t


@dataclass(frozen=True)
class FloorPolygon:
    """Room floor on the z=0 plane, in meters.

    ``edge_labels[i]`` labels the edge from vertex i to vertex i+1 as
    ``"wall"`` or ``"window"``.
    """

    vertices: np.ndarray
    edge_labels: tuple[str, ...] = ()
    camera: tuple[float, float, float] = (0.0, 0.0, CAMERA_HEIGHT)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("floor polygon needs at least three (x, y) vertices")
        labels = tuple(self.edge_labels) or ("wall",) * len(v)
        if len(labels) != len(v):
            raise ValueError(f"{len(labels)} edge labels for {len(v)} edges")
        bad = set(labels) - {"wall", "window"}
        if bad:
            raise ValueError(f"unknown edge labels {sorted(bad)}")
        poly = Polygon(v)
        if not poly.is_valid or poly.area <= 0:
            raise ValueError("floor polygon is not simple")
        cam = tuple(float(c) for c in self.camera)
        if len(cam) == 2:
            cam = cam + (CAMERA_HEIGHT,)
        if not poly.contains(Point(cam[:2])):
            raise ValueError("camera position must lie strictly inside the floor polygon")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "edge_labels", labels)
        object.__setattr__(self, "camera", cam)

    @property
    def polygon(self) -> Polygon:
        return Polygon(self.vertices)

    @property
    def orientation(self) -> float:
        """+1 for counter-clockwise vertex order, -1 for clockwise."""
        v = self.vertices
        area2 = np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        return 1.0 if area2 > 0 else -1.0

    def edge(self, i: int):
        """Start point, unit direction, inward unit normal and length of edge i."""
        v = self.vertices
        a, b = v[i], v[(i + 1) % len(v)]
        length = float(np.hypot(*(b - a)))
        d = (b - a) / length
        n = self.orientation * np.array([-d[1], d[0]])
        return a, d, n, length

    def select_edge(self, selector) -> int:
        """Edge index from an int or a label; a label picks the longest such edge."""
        if isinstance(selector, (int, np.integer)) and not isinstance(selector, bool):
            if not 0 <= selector < len(self.vertices):
                raise ValueError(f"edge index {selector} out of range")
            return int(selector)
        if isinstance(selector, str) and selector.isdigit():
            return self.select_edge(int(selector))
        idx = [i for i, lab in enumerate(self.edge_labels) if lab == selector]
        if not idx:
            raise ValueError(f"floor has no {selector!r} edge")
        return max(idx, key=lambda i: (self.edge(i)[3], -i))

    def to_dict(self) -> dict:
        return {"vertices": self.vertices.tolist(), "edge_labels": list(self.edge_labels),
                "camera": list(self.camera)}

    @classmethod
    def from_dict(cls, d: dict) -> "FloorPolygon":
        return cls(np.asarray(d["vertices"], float), tuple(d.get("edge_labels", ())),
                   tuple(d.get("camera", (0.0, 0.0, CAMERA_HEIGHT))))

    @classmethod
    def load(cls, path) -> "FloorPolygon":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class FurnitureItem:
    """Rectangular footprint ``size_x`` by ``size_y`` centered on the object origin.

    The front of the item points along its +y axis; ``height`` and the
    optional OBJ ``mesh`` only matter to the renderer.
    """

    id: str
    size_x: float
    size_y: float
    height: float = 0.8
    mesh: str | None = None
    albedo: tuple[float, float, float] = (0.5, 0.5, 0.5)

    def __post_init__(self):
        if not (self.size_x > 0 and self.size_y > 0 and self.height > 0):
            raise ValueError(f"item {self.id!r} needs positive dimensions")
        if any(not 0 <= a <= 1 for a in self.albedo):
            raise ValueError(f"item {self.id!r} albedo must lie in [0, 1]")
        object.__setattr__(self, "albedo", tuple(float(a) for a in self.albedo))

    def footprint(self) -> np.ndarray:
        hx, hy = self.size_x / 2, self.size_y / 2
        return np.array([[-hx, -hy], [hx, -hy], [hx, hy], [-hx, hy]])

    def to_dict(self) -> dict:
        return {"id": self.id, "size": [self.size_x, self.size_y], "height": self.height,
                "mesh": self.mesh, "albedo": list(self.albedo)}

    @classmethod
    def from_dict(cls, d: dict, base: Path | None = None) -> "FurnitureItem":
        sx, sy = d["size"][:2]
        height = d.get("height", d["size"][2] if len(d["size"]) > 2 else 0.8)
        mesh = d.get("mesh")
        if mesh and base is not None and not Path(mesh).is_absolute():
            mesh = str(base / mesh)
        return cls(str(d["id"]), float(sx), float(sy), float(height), mesh, tuple(d.get("albedo", (0.5,) * 3)))


@dataclass(frozen=True)
class PlacementRule:
    item: str
    edge: int | str = "wall"
    orientation: str = "face-interior"
    u: float = 0.5
    v: float = 0.0

    def __post_init__(self):
        if self.orientation not in ORIENTATIONS:
            raise ValueError(f"orientation must be one of {ORIENTATIONS}")
        if not (0 <= self.u <= 1 and 0 <= self.v <= 1):
            raise ValueError("u and v must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {"item": self.item, "edge": self.edge, "orientation": self.orientation, "u": self.u, "v": self.v}

    @classmethod
    def from_dict(cls, d: dict) -> "PlacementRule":
        return cls(str(d["item"]), d.get("edge", "wall"), d.get("orientation", "face-interior"),
                   float(d.get("u", 0.5)), float(d.get("v", 0.0)))


@dataclass(frozen=True)
class PlacedItem:
    item: FurnitureItem
    theta: float
    t: tuple[float, float]

    def footprint(self) -> np.ndarray:
        return apply_rigid(self.item.footprint(), self.theta, self.t)

    def polygon(self) -> Polygon:
        return Polygon(self.footprint())

    @property
    def front(self) -> np.ndarray:
        c, s = cos_sin(self.theta)
        return np.array([-s, c])

    def to_dict(self) -> dict:
        return {"item": self.item.to_dict(), "theta": self.theta, "t": list(self.t)}

    @classmethod
    def from_dict(cls, d: dict) -> "PlacedItem":
        return cls(FurnitureItem.from_dict(d["item"]), float(d["theta"]), tuple(float(x) for x in d["t"]))


def _front_direction(orientation: str, d: np.ndarray, n: np.ndarray) -> np.ndarray:
    if orientation == "face-interior":
        return n
    if orientation == "face-window":
        return -n
    return d


def support_distance(floor: FloorPolygon, edge: int, s0: float, s1: float) -> float:
    """How far the edge span [s0, s1] can sweep inward before meeting the boundary.

    Only boundary points strictly inside the span's band count, so walls
    meeting the edge at right angles at the span ends do not block it.
    """
    a, d, n, _ = floor.edge(edge)
    v = floor.vertices
    rel = v - a
    pa = rel @ d
    pn = rel @ n
    lo, hi = s0 + _EPS, s1 - _EPS
    best = math.inf
    m = len(v)
    for i in range(m):
        if i == edge:
            continue
        j = (i + 1) % m
        a0, a1, n0, n1 = pa[i], pa[j], pn[i], pn[j]
        if max(a0, a1) <= lo or min(a0, a1) >= hi:
            continue
        if abs(a1 - a0) < 1e-15:
            ns = [n0, n1]
        else:
            ts = sorted((np.clip((lo - a0) / (a1 - a0), 0, 1), np.clip((hi - a0) / (a1 - a0), 0, 1)))
            ns = [n0 + (n1 - n0) * ts[0], n0 + (n1 - n0) * ts[1]]
        if max(ns) <= _EPS:
            continue  # behind the edge line
        best = min(best, max(min(ns), 0.0))
    return best


def place_item(floor: FloorPolygon, item: FurnitureItem, rule: PlacementRule) -> PlacedItem:
    """Rigid transform putting ``item`` against the rule's edge.

    ``u`` interpolates the along-edge position between the two flush ends
    of the edge; ``v`` interpolates between flush against the edge (0) and
    flush against the first boundary met along the inward normal (1).

    Raises
    ------
    InfeasiblePlacement
        If the item is longer than the edge, deeper than the free space in
        front of it, or its footprint leaves the floor.
    """
    if rule.item != item.id:
        raise ValueError(f"rule is for {rule.item!r}, not {item.id!r}")
    idx = floor.select_edge(rule.edge)
    a, d, n, length = floor.edge(idx)
    f = _front_direction(rule.orientation, d, n)
    theta = math.atan2(-f[0], f[1])
    along_edge_is_x = rule.orientation != "align-edge"
    e_a = item.size_x if along_edge_is_x else item.size_y
    e_n = item.size_y if along_edge_is_x else item.size_x
    if e_a > length + _EPS:
        raise InfeasiblePlacement(f"{item.id}: {e_a:.3f} m does not fit on a {length:.3f} m edge")
    s = e_a / 2 + rule.u * max(length - e_a, 0.0)
    depth = support_distance(floor, idx, s - e_a / 2, s + e_a / 2)
    if not math.isfinite(depth) or depth + _EPS < e_n:
        raise InfeasiblePlacement(f"{item.id}: only {depth:.3f} m free in front of edge {idx}, needs {e_n:.3f} m")
    b = rule.v * max(depth - e_n, 0.0)
    t = a + d * s + n * (b + e_n / 2)
    placed = PlacedItem(item, theta, (float(t[0]), float(t[1])))
    if not _contained(floor.polygon, placed.polygon()):
        raise InfeasiblePlacement(f"{item.id}: footprint leaves the floor at edge {idx}")
    return placed


def _contained(room: Polygon, fp: Polygon) -> bool:
    return room.buffer(TOUCH_TOLERANCE, join_style="mitre").contains(fp)


class LayoutReport(NamedTuple):
    contained: dict[str, bool]
    overlaps: dict[tuple[str, str], float]
    clearance: dict[str, float]
    warnings: list[str]

    @property
    def violations(self) -> list[str]:
        out = [f"{k} leaves the floor" for k, ok in self.contained.items() if not ok]
        out += [f"{a} overlaps {b} by {area:.3g} m^2" for (a, b), area in self.overlaps.items() if area > TOUCH_TOLERANCE]
        return out

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_layout(floor: FloorPolygon, placed: Sequence[PlacedItem]) -> LayoutReport:
    """Containment, pairwise overlap area and camera clearance for a layout."""
    room = floor.polygon
    cam = Point(floor.camera[:2])
    polys = [(p.item.id, p.polygon()) for p in placed]
    contained = {k: _contained(room, fp) for k, fp in polys}
    overlaps = {}
    for i in range(len(polys)):
        for j in range(i + 1, len(polys)):
            overlaps[(polys[i][0], polys[j][0])] = float(polys[i][1].intersection(polys[j][1]).area)
    clearance = {k: float(fp.distance(cam)) for k, fp in polys}
    warnings = [f"{k} is {c:.2f} m from the camera" for k, c in clearance.items() if c < CLEARANCE_WARNING]
    return LayoutReport(contained, overlaps, clearance, warnings)


class LayoutResult(NamedTuple):
    placed: list[PlacedItem]
    skipped: dict[str, str]


def generate_layout(floor: FloorPolygon, rules: Sequence[PlacementRule], items) -> LayoutResult:
    """Greedy placement in rule order; items that do not fit or collide are skipped."""
    catalog = items if isinstance(items, dict) else {it.id: it for it in items}
    placed: list[PlacedItem] = []
    polys: list[Polygon] = []
    skipped: dict[str, str] = {}
    seen = set()
    for rule in rules:
        if rule.item in seen:
            raise ValueError(f"item {rule.item!r} appears in more than one rule")
        seen.add(rule.item)
        if rule.item not in catalog:
            skipped[rule.item] = "unknown item"
            continue
        try:
            p = place_item(floor, catalog[rule.item], rule)
        except InfeasiblePlacement as exc:
            skipped[rule.item] = str(exc)
            continue
        fp = p.polygon()
        hit = next((q.item.id for q, qp in zip(placed, polys) if fp.intersection(qp).area > TOUCH_TOLERANCE), None)
        if hit is not None:
            skipped[rule.item] = f"overlaps {hit}"
            continue
        placed.append(p)
        polys.append(fp)
    return LayoutResult(placed, skipped)


def enumerate_layouts(floor: FloorPolygon, rules: Sequence[PlacementRule], items, count: int,
                      seed: int = 0) -> list[LayoutResult]:
    """Alternative layouts drawn by resampling every rule's ``u`` and ``v``."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        varied = [PlacementRule(r.item, r.edge, r.orientation, float(rng.random()), float(rng.random()))
                  for r in rules]
        out.append(generate_layout(floor, varied, items))
    return out


# -- config files ------------------------------------------------------------

def load_rules(path):
    """Items and rules from ``{"items": [...], "rules": [...]}``."""
    path = Path(path)
    d = json.loads(path.read_text())
    items = {it["id"]: FurnitureItem.from_dict(it, path.parent) for it in d.get("items", [])}
    rules = [PlacementRule.from_dict(r) for r in d.get("rules", [])]
    return items, rules


def save_placed(path, placed: Sequence[PlacedItem], skipped: dict | None = None) -> None:
    doc = {"placed": [p.to_dict() for p in placed], "skipped": dict(sorted((skipped or {}).items()))}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_placed(path) -> list[PlacedItem]:
    return [PlacedItem.from_dict(d) for d in json.loads(Path(path).read_text())["placed"]]


# -- meshes --------------------------------------------------------------------

@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray

    def triangles(self) -> np.ndarray:
        return self.vertices[self.faces]


def load_obj(path) -> Mesh:
    """Vertices and faces of a Wavefront OBJ; polygons are fan-triangulated."""
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            ids = []
            for tok in parts[1:]:
                k = int(tok.split("/")[0])
                ids.append(k - 1 if k > 0 else len(verts) + k)
            faces.extend([ids[0], ids[i], ids[i + 1]] for i in range(1, len(ids) - 1))
    if not verts or not faces:
        raise ValueError(f"{path}: no geometry")
    return Mesh(np.array(verts, dtype=np.float64), np.array(faces, dtype=np.int64))


def box_mesh(size_x: float, size_y: float, height: float) -> Mesh:
    hx, hy = size_x / 2, size_y / 2
    v = np.array([[x, y, z] for z in (0.0, height) for y in (-hy, hy) for x in (-hx, hx)])
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    f = [[q[0], q[1], q[2]] for q in quads] + [[q[0], q[2], q[3]] for q in quads]
    return Mesh(v, np.array(f, dtype=np.int64))


def item_mesh(item: FurnitureItem) -> Mesh:
    """The item's OBJ mesh, or a box filling its footprint when none is given.

    A mesh whose xy extent exceeds the footprint is rejected.
    """
    if item.mesh is None:
        return box_mesh(item.size_x, item.size_y, item.height)
    mesh = load_obj(item.mesh)
    hx, hy = item.size_x / 2 + 1e-6, item.size_y / 2 + 1e-6
    if np.any(np.abs(mesh.vertices[:, 0]) > hx) or np.any(np.abs(mesh.vertices[:, 1]) > hy):
        raise ValueError(f"mesh of {item.id!r} extends beyond its footprint")
    return mesh


def placed_mesh(p: PlacedItem) -> Mesh:
    m = item_mesh(p.item)
    return Mesh(apply_rigid(m.vertices, p.theta, p.t), m.faces)
