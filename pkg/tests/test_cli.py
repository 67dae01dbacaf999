import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from homestage import imageio
from homestage.cli import inspect_file, main
from homestage.hdr import SHUTTER_LADDER, RadianceImage, apply_calibration
from homestage.rgbe import read_hdr, write_hdr

FIXTURE = Path(__file__).resolve().parents[1] / "fixtures" / "box_room"


def smooth_pano(h, w):
    from homestage.sphere import pano_directions

    d = pano_directions(h, w)
    base = 50 * (1.5 + 0.4 * d[..., 0] + 0.3 * d[..., 2])
    return np.stack([base, 0.9 * base, 1.1 * base], -1)


def test_inspect_reports(tmp_path):
    write_hdr(tmp_path / "cal.hdr", apply_calibration(RadianceImage(smooth_pano(16, 32)), 12.5))
    text = inspect_file(tmp_path / "cal.hdr")
    assert "Absolute, k=12.5" in text and "equirectangular" in text
    assert "luminance min/mean/max" in text and "EXPOSURE=12.5" in text
    m = np.zeros((10, 20), bool)
    m[:, :5] = True
    imageio.write_mask(tmp_path / "m.png", m)
    assert "mask coverage: 25.00%" in inspect_file(tmp_path / "m.png")
    (tmp_path / "c.json").write_text(json.dumps({"a": [1, 2], "b": 3}))
    assert "a: 2 entries" in inspect_file(tmp_path / "c.json")
    (tmp_path / "x.xyz").write_text("?")
    with pytest.raises(ValueError, match="unknown file format"):
        inspect_file(tmp_path / "x.xyz")
    assert main(["inspect", str(tmp_path / "x.xyz")]) == 2


def test_merge_and_calibrate(tmp_path, capsys):
    rng = np.random.default_rng(0)
    radiance = 10 ** rng.uniform(-1, 2, (8, 16, 3))
    times = SHUTTER_LADDER[2:6]
    frames = [np.clip(radiance * t, 0, 1) for t in times]
    sidecar = imageio.write_bracket(tmp_path, frames, times)
    assert main(["merge", "--bracket", str(sidecar), "--out", str(tmp_path / "rel.hdr")]) == 0
    rel = read_hdr(tmp_path / "rel.hdr")
    assert not rel.is_absolute
    target = np.zeros((8, 16), bool)
    target[2:5, 3:9] = True
    imageio.write_mask(tmp_path / "t.png", target)
    assert main(["calibrate", "--in", str(tmp_path / "rel.hdr"), "--target", str(tmp_path / "t.png"),
                 "--measured", "250", "--out", str(tmp_path / "abs.hdr"),
                 "--false-color", str(tmp_path / "fc.png")]) == 0
    cal = read_hdr(tmp_path / "abs.hdr")
    assert cal.is_absolute and cal.k > 0
    assert (tmp_path / "fc.png").exists()
    assert "k1=" in capsys.readouterr().out
    # neither k nor a target
    assert main(["calibrate", "--in", str(tmp_path / "rel.hdr"), "--out", str(tmp_path / "x.hdr")]) == 2


def test_fisheye_to_latlong(tmp_path):
    img = RadianceImage(np.full((64, 64, 3), 100.0), projection="fisheye-equidistant")
    write_hdr(tmp_path / "fe.hdr", apply_calibration(img, 1.0))
    assert main(["fisheye", "--in", str(tmp_path / "fe.hdr"), "--correct", "--nd", "3.0", "--to-latlong",
                 "--height", "16", "--out", str(tmp_path / "env.hdr")]) == 0
    env = read_hdr(tmp_path / "env.hdr")
    assert env.shape == (16, 32) and env.projection == "equirectangular"
    np.testing.assert_allclose(env.pixels[:8].mean(), 1e5, rtol=0.02)


def test_project_and_stitch_round_trip(tmp_path):
    pano = apply_calibration(RadianceImage(smooth_pano(64, 128)), 2.0)
    write_hdr(tmp_path / "p.hdr", pano)
    assert main(["project", "--in", str(tmp_path / "p.hdr"), "--plan-out", str(tmp_path / "plan.json"),
                 "--size", "64", "--out", str(tmp_path / "views")]) == 0
    assert len(list((tmp_path / "views").glob("view_*.hdr"))) == 12
    assert main(["stitch", "--plan", str(tmp_path / "plan.json"), "--views", str(tmp_path / "views"),
                 "--height", "64", "--out", str(tmp_path / "back.hdr")]) == 0
    back = read_hdr(tmp_path / "back.hdr")
    assert back.is_absolute and back.k == pytest.approx(2.0)
    rms = np.sqrt(np.mean((back.pixels - pano.pixels) ** 2)) / np.sqrt(np.mean(pano.pixels ** 2))
    assert rms < 0.02
    assert main(["project", "--in", str(tmp_path / "p.hdr"), "--fov", "60", "--theta", "90",
                 "--size", "32", "--out", str(tmp_path / "east.hdr")]) == 0
    assert read_hdr(tmp_path / "east.hdr").projection == "perspective"


def test_mask_inpaint_layout_render(tmp_path):
    root = tmp_path / "room"
    shutil.copytree(FIXTURE, root)
    cal = tmp_path / "cal.hdr"
    assert main(["calibrate", "--in", str(root / "capture.hdr"), "--k", "40", "--out", str(cal)]) == 0
    assert main(["mask", "--pano", str(cal), "--corners", str(root / "corners.txt"),
                 "--furniture", str(root / "furniture.png"), "--out", str(tmp_path / "m.png"),
                 "--floor-out", str(tmp_path / "f.png")]) == 0
    m = imageio.read_mask(tmp_path / "m.png")
    assert (m >= imageio.read_mask(root / "furniture.png")).all()
    assert main(["inpaint", "--in", str(cal), "--mask", str(tmp_path / "m.png"), "--floor", str(tmp_path / "f.png"),
                 "--out", str(tmp_path / "empty.hdr")]) == 0
    a, b = read_hdr(cal), read_hdr(tmp_path / "empty.hdr")
    assert np.array_equal(a.pixels[~m], b.pixels[~m])
    assert main(["layout", "--floor", str(root / "floor.json"), "--rules", str(root / "rules.json"),
                 "--out", str(tmp_path / "placed.json")]) == 0
    assert len(json.loads((tmp_path / "placed.json").read_text())["placed"]) == 3


def test_stage_and_render_subcommands(tmp_path):
    root = tmp_path / "room"
    shutil.copytree(FIXTURE, root)
    assert main(["stage", str(root / "manifest.json")]) == 0
    scene = root / "out" / "scene.json"
    assert main(["render", "--scene", str(scene), "--spp", "1", "--bounces", "1", "--width", "32",
                 "--out", str(tmp_path / "r.hdr"), "--preview", str(tmp_path / "r.png"),
                 "--rad", str(tmp_path / "r.rad")]) == 0
    assert read_hdr(tmp_path / "r.hdr").shape == (16, 32)
    assert (tmp_path / "r.png").exists() and (tmp_path / "r.rad").exists()
    # stage failure and validation errors map to exit codes 3 and 2
    (root / "rules.json").unlink()
    assert main(["stage", str(root / "manifest.json"), "--output", str(tmp_path / "o2")]) == 3
    (root / "bad.json").write_text(json.dumps({"calibrate": {"hdr": "capture.hdr", "k": 1}, "typo": {}}))
    assert main(["stage", str(root / "bad.json")]) == 2


def test_console_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "homestage.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("merge", "calibrate", "fisheye", "project", "stitch", "mask", "inpaint", "layout", "render",
                "stage", "inspect"):
        assert sub in out.stdout


def test_fisheye_with_example_configs(tmp_path):
    configs = FIXTURE.parent / "configs"
    img = RadianceImage(np.full((32, 32, 3), 2.0), projection="fisheye-hemispherical")
    write_hdr(tmp_path / "fe.hdr", apply_calibration(img, 1.0))
    assert main(["fisheye", "--in", str(tmp_path / "fe.hdr"), "--correct",
                 "--vignetting", str(configs / "vignetting_example.json"),
                 "--color", str(configs / "nd3_color_example.json"), "--out", str(tmp_path / "c.hdr")]) == 0
    out = read_hdr(tmp_path / "c.hdr")
    center = out.pixels[16, 16]
    # the optical axis only sees the filter gains, the rim is also brightened by the falloff correction
    np.testing.assert_allclose(center, 2.0 * np.array([960, 1000, 1070]), rtol=0.02)
    assert out.pixels[16, 1, 1] > center[1]
