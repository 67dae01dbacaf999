"""Command-line entry point: ``homestage <subcommand> ...``.

Exit codes: 0 success, 2 invalid input or arguments, 3 a pipeline stage failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import imageio, rgbe

EXIT_OK, EXIT_INVALID, EXIT_STAGE = 0, 2, 3

log = logging.getLogger("homestage")


def _floats(text: str, n: int) -> tuple[float, ...]:
    vals = tuple(float(v) for v in text.split(","))
    if len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
    return vals


def _read_any(path: Path):
    """HDR images as RadianceImage, anything else as a float array (masks as 0/1)."""
    if path.suffix.lower() == ".hdr":
        return rgbe.read_hdr(path)
    return imageio.read_ldr(path)


# -- subcommands -------------------------------------------------------------------

def cmd_merge(a) -> int:
    from .hdr import merge_exposures

    bracket = imageio.read_bracket(a.bracket)
    res = merge_exposures(bracket, a.floor)
    rgbe.write_hdr(a.out, res.image)
    if a.saturation_mask:
        imageio.write_mask(a.saturation_mask, res.saturated)
    print(f"merged {len(bracket.images)} exposures -> {a.out} ({int(res.saturated.sum())} saturated pixels)")
    return EXIT_OK


def cmd_calibrate(a) -> int:
    from .hdr import CalibrationFactor, apply_calibration, compute_k1, false_color, luminance_map

    hdr = rgbe.read_hdr(a.input)
    if hdr.is_absolute:
        print(f"note: {a.input} is already calibrated (k={hdr.k:g}); factors compose", file=sys.stderr)
    if a.k is not None:
        factor = CalibrationFactor(a.k, a.k2)
    else:
        if a.target is None or a.measured is None:
            raise ValueError("give --k, or --target together with --measured")
        k1 = compute_k1(hdr, imageio.read_mask(a.target), a.measured, a.statistic).k1
        factor = CalibrationFactor(k1, a.k2)
    cal = apply_calibration(hdr, factor)
    rgbe.write_hdr(a.out, cal)
    if a.false_color:
        imageio.write_ldr(a.false_color, false_color(luminance_map(cal), a.fc_min, a.fc_max))
    print(f"k1={factor.k1:.9g} k2={factor.k2:.9g} k={cal.k:.9g} -> {a.out}")
    return EXIT_OK


def cmd_fisheye(a) -> int:
    from .fisheye import (ColorCorrection, FisheyeImage, VignettingModel, correct_nd_color, correct_vignetting,
                          fisheye_to_latlong, reproject)

    img = rgbe.read_hdr(a.input)
    projection = a.projection or (img.projection if img.projection.startswith("fisheye") else "fisheye-equidistant")
    img = img.with_pixels(img.pixels, projection=projection, meta={})
    h, w = img.shape
    fe = FisheyeImage(img, a.center or (w / 2, h / 2), a.radius or min(h, w) / 2)
    if a.correct:
        vm = VignettingModel.load(a.vignetting) if a.vignetting else VignettingModel()
        fe = correct_vignetting(fe, vm)
        if a.color:
            fe = correct_nd_color(fe, ColorCorrection.load(a.color))
        elif a.nd is not None:
            fe = correct_nd_color(fe, ColorCorrection.from_nd(a.nd))
    if a.to_latlong:
        if fe.projection != "hemispherical":
            fe = reproject(fe, "hemispherical")
        out, report = fisheye_to_latlong(fe, a.height, a.up, math.radians(a.rotation_deg), a.lower)
        print(f"irradiance change through remap: {100 * report.relative_change:.3f}%")
    else:
        out = fe.image
    rgbe.write_hdr(a.out, out)
    print(f"-> {a.out} ({out.projection}, {out.shape[1]}x{out.shape[0]})")
    return EXIT_OK


def cmd_project(a) -> int:
    from .hdr import RadianceImage
    from .sphere import ViewWindow, equirect_to_perspective, load_plan, plan_views, save_plan

    src = _read_any(Path(a.input))
    is_hdr = isinstance(src, RadianceImage)
    pixels = src.pixels if is_hdr else src
    order = 0 if a.nearest else 1
    if a.plan_out or a.plan:
        windows = load_plan(a.plan) if a.plan else plan_views(math.radians(a.fov), a.overlap, a.size)
        if a.plan_out:
            save_plan(a.plan_out, windows)
        out_dir = Path(a.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for i, win in enumerate(windows):
            _write_view(out_dir / f"view_{i:02d}{'.hdr' if is_hdr else '.png'}",
                        equirect_to_perspective(pixels, win, order), src if is_hdr else None)
        print(f"{len(windows)} views -> {out_dir}")
        return EXIT_OK
    win = ViewWindow(math.radians(a.fov), math.radians(a.theta), math.radians(a.phi), a.size, a.size)
    _write_view(Path(a.out), equirect_to_perspective(pixels, win, order), src if is_hdr else None)
    print(f"view fov={a.fov} theta={a.theta} phi={a.phi} -> {a.out}")
    return EXIT_OK


def _write_view(path: Path, px: np.ndarray, like) -> None:
    if path.suffix.lower() == ".hdr":
        rgbe.write_hdr(path, like.with_pixels(px, projection="perspective", meta={}))
    else:
        imageio.write_ldr(path, px)


def cmd_stitch(a) -> int:
    from .hdr import RadianceImage
    from .sphere import View, load_plan, perspective_to_equirect

    windows = load_plan(a.plan)
    views_dir = Path(a.views)
    views, proto = [], None
    for i, win in enumerate(windows):
        hdr_path, png_path = views_dir / f"view_{i:02d}.hdr", views_dir / f"view_{i:02d}.png"
        if hdr_path.exists():
            img = rgbe.read_hdr(hdr_path)
            proto = proto or img
            views.append(View(win, img.pixels))
        elif png_path.exists():
            views.append(View(win, imageio.read_ldr(png_path)))
        else:
            raise ValueError(f"view {i} missing in {views_dir}")
    pano, coverage = perspective_to_equirect(views, a.height, 2 * a.height, 0 if a.nearest else 1)
    if not coverage.all():
        print(f"warning: {100 * (1 - coverage.mean()):.2f}% of the panorama is not covered", file=sys.stderr)
    out = Path(a.out)
    if out.suffix.lower() == ".hdr":
        base = proto or RadianceImage(np.zeros((1, 1, 3)))
        rgbe.write_hdr(out, RadianceImage(pano, base.calibration, base.k, "equirectangular"))
    else:
        imageio.write_ldr(out, pano)
    print(f"stitched {len(views)} views -> {out}")
    return EXIT_OK


def cmd_mask(a) -> int:
    from .masks import (combine_masks, filter_contours_by_floor, floor_boundary_from_layout, furniture_from_labels,
                        sunlight_mask, tripod_mask)

    pano = rgbe.read_hdr(a.pano)
    dims = pano.shape
    floor = floor_boundary_from_layout(a.corners, dims, a.camera_height)
    if a.furniture:
        furn = imageio.read_mask(a.furniture)
    elif a.labels and a.classes:
        furn = furniture_from_labels(imageio.read_labels(a.labels), imageio.read_class_table(a.classes),
                                     a.furniture_classes.split(",")).data
    else:
        raise ValueError("give --furniture, or --labels with --classes")
    parts = [filter_contours_by_floor(furn, floor), tripod_mask(dims, math.radians(a.cap_deg))]
    if not a.no_sunlight:
        parts.append(sunlight_mask(pano, a.threshold))
    target = combine_masks(parts, a.dilation)
    imageio.write_mask(a.out, target)
    if a.floor_out:
        imageio.write_mask(a.floor_out, floor)
    print(f"target mask covers {100 * target.coverage:.2f}% -> {a.out}")
    return EXIT_OK


def cmd_inpaint(a) -> int:
    from .inpaint import inpaint

    img = rgbe.read_hdr(a.input)
    img = img.with_pixels(img.pixels, meta={})
    mask = imageio.read_mask(a.mask)
    floor = imageio.read_mask(a.floor) if a.floor else np.zeros_like(mask)
    out = inpaint(img, mask, floor, a.command)
    rgbe.write_hdr(a.out, out)
    print(f"filled {int(mask.sum())} pixels -> {a.out}")
    return EXIT_OK


def cmd_layout(a) -> int:
    from .layout import FloorPolygon, generate_layout, load_rules, save_placed, validate_layout

    floor = FloorPolygon.load(a.floor)
    items, rules = load_rules(a.rules)
    res = generate_layout(floor, rules, items)
    report = validate_layout(floor, res.placed)
    save_placed(a.out, res.placed, res.skipped)
    for item, why in sorted(res.skipped.items()):
        print(f"skipped {item}: {why}")
    for w in report.warnings:
        print(f"warning: {w}")
    print(f"placed {len(res.placed)} of {len(rules)} items -> {a.out}")
    return EXIT_OK


def cmd_render(a) -> int:
    from .render import RenderSettings, auto_exposure, render_panorama, tone_map_preview
    from .scene import export_rad, load_scene

    scene = load_scene(a.scene)
    if a.rad:
        export_rad(a.rad, scene)
    settings = RenderSettings(a.spp, a.bounces, a.seed, a.width, a.width // 2)
    out = render_panorama(scene, settings)
    rgbe.write_hdr(a.out, out)
    if a.preview:
        exposure = a.exposure if a.exposure else auto_exposure(out)
        imageio.write_ldr(a.preview, tone_map_preview(out, exposure))
    print(f"rendered {a.width}x{a.width // 2} at {a.spp} spp -> {a.out}")
    return EXIT_OK


def cmd_stage(a) -> int:
    from .pipeline import run_pipeline

    res = run_pipeline(a.manifest, a.output, a.force)
    for s in res.ran:
        print(f"{s}: ran")
    for s in res.skipped:
        print(f"{s}: skipped (unchanged)")
    if res.failed:
        print(f"error: {res.error}", file=sys.stderr)
        return EXIT_STAGE
    print(f"artifacts in {res.output}")
    return EXIT_OK


def inspect_file(path) -> str:
    """Human-readable summary of an .hdr, .png or .json file."""
    from .hdr import relative_luminance

    path = Path(path)
    suffix = path.suffix.lower()
    lines = [str(path)]
    if suffix == ".hdr":
        with open(path, "rb") as fh:
            variables, raw, (h, w) = rgbe.read_header(fh)
        img = rgbe.read_hdr(path)
        lines.append(f"size: {w}x{h}")
        cal = f"Absolute, k={img.k:.6g}" if img.is_absolute else "Relative"
        lines.append(f"calibration: {cal}")
        guess = "equirectangular" if w == 2 * h else "not 2:1"
        lines.append(f"projection: {img.projection} (aspect guess: {guess})")
        lum = relative_luminance(img.pixels)
        unit = " cd/m^2" if img.is_absolute else ""
        lines.append(f"luminance min/mean/max: {lum.min():.6g} / {lum.mean():.6g} / {lum.max():.6g}{unit}")
        lines += [f"header: {r}" for r in raw]
    elif suffix in (".png", ".jpg", ".jpeg"):
        from PIL import Image

        with Image.open(path) as im:
            mode, (w, h) = im.mode, im.size
            arr = np.asarray(im)
        lines.append(f"size: {w}x{h}, mode {mode}")
        if mode in ("L", "1") and set(np.unique(arr).tolist()) <= {0, 1, 255, True, False}:
            lines.append(f"mask coverage: {100 * np.mean(arr > 0):.2f}%")
        elif mode == "P":
            lines.append(f"labels: {sorted(np.unique(arr).tolist())}")
        guess = "equirectangular" if w == 2 * h else "not 2:1"
        lines.append(f"aspect guess: {guess}")
    elif suffix == ".json":
        doc = json.loads(path.read_text())
        if isinstance(doc, dict):
            for k in sorted(doc):
                v = doc[k]
                desc = f"{len(v)} entries" if isinstance(v, (list, dict)) else repr(v)
                lines.append(f"{k}: {desc}")
        else:
            lines.append(f"{type(doc).__name__} with {len(doc)} entries")
    else:
        raise ValueError(f"unknown file format {suffix!r}")
    return "\n".join(lines)


def cmd_inspect(a) -> int:
    print(inspect_file(a.file))
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="homestage", description="Virtual staging of calibrated HDR panoramas.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("merge", help="merge an LDR exposure bracket into a relative HDR")
    s.add_argument("--bracket", required=True, help="bracket JSON sidecar (images, shutter_speeds, response)")
    s.add_argument("--out", required=True)
    s.add_argument("--floor", type=float, default=0.005, help="weight clamp near 0 and 1")
    s.add_argument("--saturation-mask", help="write pixels without a usable exposure as a PNG mask")
    s.set_defaults(func=cmd_merge)

    s = sub.add_parser("calibrate", help="scale an HDR to absolute luminance")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--target", help="PNG mask of the measured target")
    s.add_argument("--measured", type=float, help="luminance meter reading in cd/m^2")
    s.add_argument("--k", type=float, help="use this k1 directly")
    s.add_argument("--k2", type=float, default=1.0, help="cross-camera factor")
    s.add_argument("--statistic", choices=["mean", "median"], default="mean")
    s.add_argument("--false-color", help="also write a false-color luminance PNG")
    s.add_argument("--fc-min", type=float, default=50.0)
    s.add_argument("--fc-max", type=float, default=5000.0)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("fisheye", help="correct a fisheye sky image and/or remap it to lat-long")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--projection", choices=["fisheye-equidistant", "fisheye-hemispherical", "fisheye-equisolid"])
    s.add_argument("--center", type=lambda t: _floats(t, 2), help="image circle center x,y in pixels")
    s.add_argument("--radius", type=float, help="image circle radius (90 degrees) in pixels")
    s.add_argument("--correct", action="store_true", help="apply vignetting and ND/color correction")
    s.add_argument("--vignetting", help="vignetting model JSON")
    s.add_argument("--color", help="color-correction JSON (matrix or gains)")
    s.add_argument("--nd", type=float, help="neutral density of the filter (3.0 means x1000)")
    s.add_argument("--to-latlong", action="store_true")
    s.add_argument("--height", type=int, default=512, help="lat-long output height")
    s.add_argument("--up", type=lambda t: _floats(t, 3), default=(0.0, 0.0, 1.0), help="zenith in camera frame")
    s.add_argument("--rotation-deg", type=float, default=0.0, help="azimuth of the image x axis from north")
    s.add_argument("--lower", choices=["horizon", "zero"], default="horizon")
    s.set_defaults(func=cmd_fisheye)

    s = sub.add_parser("project", help="render perspective views of a panorama")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True, help="view file, or a directory with --plan/--plan-out")
    s.add_argument("--fov", type=float, default=90.0, help="horizontal field of view in degrees")
    s.add_argument("--theta", type=float, default=0.0, help="view azimuth in degrees (0 = north, 90 = east)")
    s.add_argument("--phi", type=float, default=0.0, help="view elevation in degrees")
    s.add_argument("--size", type=int, default=512)
    s.add_argument("--overlap", type=float, default=0.2, help="overlap fraction for generated plans")
    s.add_argument("--plan", help="existing view plan JSON")
    s.add_argument("--plan-out", help="generate a covering plan and write it here")
    s.add_argument("--nearest", action="store_true", help="nearest-neighbor sampling (for masks and labels)")
    s.set_defaults(func=cmd_project)

    s = sub.add_parser("stitch", help="stitch perspective views back into a panorama")
    s.add_argument("--plan", required=True)
    s.add_argument("--views", required=True, help="directory with view_NN.hdr or view_NN.png")
    s.add_argument("--height", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--nearest", action="store_true")
    s.set_defaults(func=cmd_stitch)

    s = sub.add_parser("mask", help="build the target mask for furniture removal")
    s.add_argument("--pano", required=True, help="calibrated panorama (.hdr)")
    s.add_argument("--corners", required=True, help="layout corner file")
    s.add_argument("--furniture", help="binary furniture mask PNG")
    s.add_argument("--labels", help="indexed segmentation PNG")
    s.add_argument("--classes", help="class table JSON")
    s.add_argument("--furniture-classes", default="sofa,chair,table,bed,cabinet,shelf,desk,lamp")
    s.add_argument("--camera-height", type=float, default=1.6)
    s.add_argument("--cap-deg", type=float, default=15.0, help="tripod cap half-angle around the nadir")
    s.add_argument("--threshold", type=float, default=2000.0, help="sunlight luminance threshold in cd/m^2")
    s.add_argument("--no-sunlight", action="store_true")
    s.add_argument("--dilation", type=int, default=3)
    s.add_argument("--out", required=True)
    s.add_argument("--floor-out", help="also write the floor region mask")
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("inpaint", help="fill masked regions of a panorama",
                       description="Built-in fill, or the command in $HOMESTAGE_INPAINTER / --command, "
                                   "called as: command <image> <mask> <output>.")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--floor", help="floor region mask; fills never cross its boundary")
    s.add_argument("--command", help="external inpainter command")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_inpaint)

    s = sub.add_parser("layout", help="place furniture from rules")
    s.add_argument("--floor", required=True, help="floor polygon JSON")
    s.add_argument("--rules", required=True, help="items and rules JSON")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_layout)

    s = sub.add_parser("render", help="path-trace a staged scene")
    s.add_argument("--scene", required=True, help="scene JSON written by the stage pipeline")
    s.add_argument("--out", required=True)
    s.add_argument("--spp", type=int, default=256)
    s.add_argument("--bounces", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--width", type=int, default=2048)
    s.add_argument("--preview", help="tone-mapped PNG")
    s.add_argument("--exposure", type=float, help="preview exposure (default: log-average to 0.18)")
    s.add_argument("--rad", help="also export the scene as a Radiance .rad file")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("stage", help="run the end-to-end pipeline from a manifest")
    s.add_argument("manifest")
    s.add_argument("--output", help="artifact directory (default: manifest 'output')")
    s.add_argument("--force", action="store_true", help="ignore cached stage hashes")
    s.set_defaults(func=cmd_stage)

    s = sub.add_parser("inspect", help="summarize an .hdr, mask PNG or JSON config",
                       description="A panorama whose width is twice its height is reported as equirectangular.")
    s.add_argument("file")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from .pipeline import ManifestError

    try:
        return args.func(args)
    except ManifestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
