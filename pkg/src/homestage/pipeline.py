"""End-to-end staging run driven by one JSON manifest.

The manifest has one block per stage (``calibrate``, ``mask``, ``inpaint``,
``layout``, ``render``) plus ``output`` and ``seed``. Stages run in that
order and stop at the first missing block. Each stage is keyed by a hash
of its resolved parameters, the contents of its input files and the
artifacts it consumes; a stage whose key and outputs are unchanged is
skipped, so re-running leaves the artifact directory byte-identical.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, imageio, rgbe
from .hdr import RadianceImage, apply_calibration, compute_k1, merge_exposures

log = logging.getLogger(__name__)

STAGES = ("calibrate", "mask", "inpaint", "layout", "render")
ARTIFACTS = {
    "calibrate": ["calibrated.hdr"],
    "mask": ["target_mask.png", "floor_mask.png"],
    "inpaint": ["empty.hdr"],
    "layout": ["placed.json"],
    "render": ["staged.hdr", "preview.png", "scene.json"],
}
CONSUMES = {
    "calibrate": [],
    "mask": ["calibrated.hdr"],
    "inpaint": ["calibrated.hdr", "target_mask.png", "floor_mask.png"],
    "layout": [],
    "render": ["empty.hdr", "placed.json"],
}
RUN_LOG = "run_log.json"

# every tunable, with its default; file-valued keys are resolved against the manifest directory
DEFAULTS = {
    "calibrate": {"hdr": None, "bracket": None, "target_mask": None, "measured_luminance": None, "k": None,
                  "k2": 1.0, "statistic": "mean", "merge_floor": 0.005},
    "mask": {"corners": None, "furniture_mask": None, "labels": None, "classes": None,
             "furniture_classes": ["sofa", "chair", "table", "bed", "cabinet", "shelf", "desk", "lamp"],
             "camera_height": 1.6, "tripod_cap_deg": 15.0, "sunlight_threshold": 2000.0, "dilation": 3},
    "inpaint": {"periodic_floor": True, "floor_view_fov_deg": 150.0, "view_size": 512, "command": None},
    "layout": {"floor": None, "rules": None},
    "render": {"env": None, "env_rotation_deg": 0.0, "window": None, "ceiling_height": 2.8, "texel_size": 0.02,
               "irradiance": None, "spp": 256, "bounces": 4, "width": 2048, "exposure": None},
}
FILE_KEYS = {
    "calibrate": ("hdr", "bracket", "target_mask"),
    "mask": ("corners", "furniture_mask", "labels", "classes"),
    "inpaint": (),
    "layout": ("floor", "rules"),
    "render": ("env",),
}


class ManifestError(ValueError):
    """The manifest is malformed (exit code 2)."""


class StageError(RuntimeError):
    """A stage could not complete (exit code 3)."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r}: {message}")
        self.stage = stage


@dataclass
class RunResult:
    output: Path
    ran: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failed: str | None = None
    error: str | None = None


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def load_manifest(path) -> tuple[dict, Path]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    return validate_manifest(doc), path.parent


def validate_manifest(doc: dict) -> dict:
    """Check block and key names and fill defaults; returns a new dict."""
    if not isinstance(doc, dict):
        raise ManifestError("manifest must be a JSON object")
    allowed = {"output", "seed", *STAGES}
    unknown = set(doc) - allowed
    if unknown:
        raise ManifestError(f"unknown manifest blocks {sorted(unknown)}")
    out = {"output": doc.get("output", "staged"), "seed": int(doc.get("seed", 0))}
    for stage in STAGES:
        if stage not in doc:
            continue
        block = doc[stage]
        if not isinstance(block, dict):
            raise ManifestError(f"block {stage!r} must be an object")
        bad = set(block) - set(DEFAULTS[stage])
        if bad:
            raise ManifestError(f"block {stage!r} has unknown keys {sorted(bad)}")
        merged = copy.deepcopy(DEFAULTS[stage])
        merged.update(block)
        out[stage] = merged
    c = out.get("calibrate")
    if c is not None:
        if (c["hdr"] is None) == (c["bracket"] is None):
            raise ManifestError("calibrate needs exactly one of 'hdr' or 'bracket'")
        if c["k"] is None and (c["target_mask"] is None or c["measured_luminance"] is None):
            raise ManifestError("calibrate needs 'k' or both 'target_mask' and 'measured_luminance'")
    m = out.get("mask")
    if m is not None:
        if m["corners"] is None:
            raise ManifestError("mask needs layout 'corners'")
        if m["furniture_mask"] is None and m["labels"] is None:
            raise ManifestError("mask needs 'furniture_mask' or 'labels'")
    lay = out.get("layout")
    if lay is not None and (lay["floor"] is None or lay["rules"] is None):
        raise ManifestError("layout needs 'floor' and 'rules'")
    r = out.get("render")
    if r is not None and r["env"] is None:
        raise ManifestError("render needs an 'env' map")
    return out


class _Context:
    def __init__(self, manifest: dict, base: Path, out: Path):
        self.m = manifest
        self.base = base
        self.out = out

    def input(self, stage: str, key: str) -> Path | None:
        value = self.m[stage][key]
        if value is None:
            return None
        p = Path(value)
        p = p if p.is_absolute() else self.base / p
        if not p.exists():
            raise StageError(stage, f"missing input {key}={value}")
        return p

    def artifact(self, name: str) -> Path:
        return self.out / name


# -- stages ------------------------------------------------------------------------

def _stage_calibrate(ctx: _Context, p: dict) -> dict:
    if p["bracket"] is not None:
        bracket = imageio.read_bracket(ctx.input("calibrate", "bracket"))
        hdr = merge_exposures(bracket, p["merge_floor"]).image
    else:
        hdr = rgbe.read_hdr(ctx.input("calibrate", "hdr"))
        hdr = hdr.with_pixels(hdr.pixels, meta={})
    if hdr.is_absolute:
        hdr = RadianceImage(hdr.pixels / hdr.k, projection=hdr.projection)
    if p["k"] is not None:
        k1 = float(p["k"])
    else:
        target = imageio.read_mask(ctx.input("calibrate", "target_mask"))
        k1 = compute_k1(hdr, target, float(p["measured_luminance"]), p["statistic"]).k1
    k = k1 * float(p["k2"])
    cal = apply_calibration(hdr, k)
    rgbe.write_hdr(ctx.artifact("calibrated.hdr"), cal)
    return {"k1": k1, "k": k}


def _stage_mask(ctx: _Context, p: dict) -> dict:
    from .masks import (combine_masks, filter_contours_by_floor, floor_boundary_from_layout, furniture_from_labels,
                        read_corners, sunlight_mask, tripod_mask)

    pano = rgbe.read_hdr(ctx.artifact("calibrated.hdr"))
    dims = pano.shape
    corners = read_corners(ctx.input("mask", "corners"))
    try:
        floor = floor_boundary_from_layout(corners, dims, p["camera_height"])
    except ValueError as exc:
        raise StageError("mask", str(exc)) from exc
    if p["furniture_mask"] is not None:
        furn = imageio.read_mask(ctx.input("mask", "furniture_mask"))
    else:
        labels = imageio.read_labels(ctx.input("mask", "labels"))
        table = imageio.read_class_table(ctx.input("mask", "classes"))
        furn = furniture_from_labels(labels, table, p["furniture_classes"]).data
    if furn.shape != dims:
        raise StageError("mask", f"furniture mask {furn.shape} does not match panorama {dims}")
    parts = [filter_contours_by_floor(furn, floor), tripod_mask(dims, math.radians(p["tripod_cap_deg"])),
             sunlight_mask(pano, p["sunlight_threshold"])]
    target = combine_masks(parts, int(p["dilation"]))
    imageio.write_mask(ctx.artifact("target_mask.png"), target)
    imageio.write_mask(ctx.artifact("floor_mask.png"), floor)
    return {"coverage": round(target.coverage, 6), **{m.label: m.area for m in parts}}


def _stage_inpaint(ctx: _Context, p: dict) -> dict:
    import os

    from .inpaint import INPAINTER_ENV, external_inpaint, inpaint_panorama

    pano = rgbe.read_hdr(ctx.artifact("calibrated.hdr"))
    pano = pano.with_pixels(pano.pixels, meta={})
    mask = imageio.read_mask(ctx.artifact("target_mask.png"))
    floor = imageio.read_mask(ctx.artifact("floor_mask.png"))
    command = p["command"] or os.environ.get(INPAINTER_ENV)
    if command:
        out = external_inpaint(command, pano, mask, floor)
    else:
        out = inpaint_panorama(pano, mask, floor, math.radians(p["floor_view_fov_deg"]), int(p["view_size"]),
                               bool(p["periodic_floor"]))
    rgbe.write_hdr(ctx.artifact("empty.hdr"), out)
    return {"filled_pixels": int(mask.sum()), "external": bool(command)}


def _stage_layout(ctx: _Context, p: dict) -> dict:
    from .layout import FloorPolygon, generate_layout, load_rules, save_placed, validate_layout

    floor = FloorPolygon.load(ctx.input("layout", "floor"))
    items, rules = load_rules(ctx.input("layout", "rules"))
    res = generate_layout(floor, rules, items)
    report = validate_layout(floor, res.placed)
    if not report.ok:
        raise StageError("layout", "; ".join(report.violations))
    for w in report.warnings:
        log.warning(w)
    save_placed(ctx.artifact("placed.json"), res.placed, res.skipped)
    return {"placed": [q.item.id for q in res.placed], "skipped": sorted(res.skipped)}


def _stage_render(ctx: _Context, p: dict, seed: int) -> dict:
    from .layout import FloorPolygon, load_placed
    from .render import RenderSettings, auto_exposure, render_panorama, tone_map_preview
    from .scene import WindowSpec, build_scene, save_scene

    lay = ctx.m.get("layout")
    if lay is None:
        raise StageError("render", "needs the layout block for the floor polygon")
    floor = FloorPolygon.load(ctx.input("layout", "floor"))
    empty = rgbe.read_hdr(ctx.artifact("empty.hdr"))
    placed = load_placed(ctx.artifact("placed.json"))
    env = rgbe.read_hdr(ctx.input("render", "env"))
    if not env.is_absolute:
        raise StageError("render", "environment map is not calibrated")
    env = env.with_pixels(env.pixels, meta={})
    window = WindowSpec.from_dict(p["window"]) if p["window"] is not None else None
    try:
        scene = build_scene(floor, empty, placed, env, window, p["ceiling_height"], p["texel_size"],
                            irradiance=p["irradiance"], env_rotation=math.radians(p["env_rotation_deg"]))
    except ValueError as exc:
        raise StageError("render", str(exc)) from exc
    width = int(p["width"])
    settings = RenderSettings(int(p["spp"]), int(p["bounces"]), seed, width, width // 2)
    out = render_panorama(scene, settings)
    rgbe.write_hdr(ctx.artifact("staged.hdr"), out)
    exposure = p["exposure"] if p["exposure"] is not None else auto_exposure(out)
    imageio.write_ldr(ctx.artifact("preview.png"), tone_map_preview(out, exposure))
    save_scene(ctx.artifact("scene.json"), scene)
    return {"exposure": exposure, "irradiance": scene.irradiance, "flags": scene.flags}


_RUNNERS = {
    "calibrate": _stage_calibrate,
    "mask": _stage_mask,
    "inpaint": _stage_inpaint,
    "layout": _stage_layout,
    "render": _stage_render,
}


def _stage_key(ctx: _Context, stage: str, params: dict, seed: int) -> tuple[str, dict]:
    inputs = {}
    for key in FILE_KEYS[stage]:
        path = ctx.input(stage, key)
        if path is not None:
            inputs[key] = sha256_file(path)
    if stage == "render":
        inputs["layout.floor"] = sha256_file(ctx.input("layout", "floor"))
    consumed = {}
    for name in CONSUMES[stage]:
        a = ctx.artifact(name)
        if not a.exists():
            raise StageError(stage, f"upstream artifact {name} is missing")
        consumed[name] = sha256_file(a)
    record = {"version": __version__, "params": params, "inputs": inputs, "consumes": consumed}
    if stage == "render":
        record["seed"] = seed
    return hashlib.sha256(_canonical(record).encode()).hexdigest(), record


def run_pipeline(manifest_path, output: str | Path | None = None, force: bool = False) -> RunResult:
    """Run every stage present in the manifest, skipping unchanged ones."""
    manifest, base = load_manifest(manifest_path)
    out = Path(output) if output is not None else base / manifest["output"]
    out.mkdir(parents=True, exist_ok=True)
    ctx = _Context(manifest, base, out)
    log_path = out / RUN_LOG
    previous = {}
    if log_path.exists():
        try:
            previous = {s["stage"]: s for s in json.loads(log_path.read_text()).get("stages", [])}
        except (json.JSONDecodeError, KeyError, TypeError):
            previous = {}
    result = RunResult(out)
    entries = []
    seed = manifest["seed"]
    for stage in STAGES:
        if stage not in manifest:
            log.info("no %s block; stopping", stage)
            break
        params = manifest[stage]
        try:
            key, record = _stage_key(ctx, stage, params, seed)
            prev = previous.get(stage)
            outputs_ok = prev is not None and all(
                ctx.artifact(n).exists() and sha256_file(ctx.artifact(n)) == prev.get("outputs", {}).get(n)
                for n in ARTIFACTS[stage])
            if not force and prev is not None and prev.get("key") == key and outputs_ok:
                log.info("%s: unchanged, skipped", stage)
                result.skipped.append(stage)
                entries.append(prev)
                continue
            log.info("%s: running", stage)
            runner = _RUNNERS[stage]
            summary = runner(ctx, params, seed) if stage == "render" else runner(ctx, params)
        except StageError as exc:
            result.failed, result.error = stage, str(exc)
            log.error("%s", exc)
            break
        except (ValueError, OSError) as exc:
            result.failed, result.error = stage, f"stage {stage!r}: {exc}"
            log.error("%s", result.error)
            break
        outputs = {n: sha256_file(ctx.artifact(n)) for n in ARTIFACTS[stage]}
        entries.append({"stage": stage, "key": key, **record, "outputs": outputs, "summary": _jsonable(summary)})
        result.ran.append(stage)
    doc = {"homestage": __version__, "seed": seed, "stages": entries}
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if not log_path.exists() or log_path.read_text() != text:
        log_path.write_text(text)
    return result


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj
