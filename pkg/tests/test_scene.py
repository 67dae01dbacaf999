import math

import numpy as np
import pytest
from scipy import ndimage

from homestage.fixtures import box_floor, render_room_panorama, sky_panorama
from homestage.hdr import RadianceImage, apply_calibration
from homestage.layout import FloorPolygon, FurnitureItem, PlacedItem
from homestage.scene import (
    WindowSpec, build_scene, export_rad, intersect, load_scene, reproject_textures, room_planes, save_scene,
    window_irradiance,
)

WINDOW = WindowSpec("window", width=1.4, height=1.2, sill=0.9)


def test_box_room_six_planes_with_window_hole():
    floor = box_floor()
    planes, win = room_planes(floor, 2.8, WINDOW)
    assert len(planes) == 6
    assert [p.name for p in planes] == ["floor", "ceiling", "wall0", "wall1", "wall2", "wall3"]
    wall = planes[3]
    assert wall.holes and not planes[2].holes
    assert win.area == pytest.approx(1.4 * 1.2)
    # a ray through the window center passes, one through the wall next to it does not
    cam = np.asarray(floor.camera)
    tris = np.concatenate([p.triangles for p in planes])
    through = win.center - cam
    t, j = intersect(cam[None], (through / np.linalg.norm(through))[None], tris)
    assert j[0] == -1
    beside = win.center + np.array([0, 0, 1.0]) - cam
    t, j = intersect(cam[None], (beside / np.linalg.norm(beside))[None], tris)
    assert j[0] >= 0
    # wall area minus the hole
    area = 0.5 * np.linalg.norm(np.cross(wall.triangles[:, 1] - wall.triangles[:, 0],
                                         wall.triangles[:, 2] - wall.triangles[:, 0]), axis=1).sum()
    assert area == pytest.approx(4 * 2.8 - 1.4 * 1.2)
    np.testing.assert_allclose(win.inward, [-1, 0, 0], atol=1e-12)


def test_window_outside_wall_rejected():
    with pytest.raises(ValueError, match="fit"):
        room_planes(box_floor(), 2.8, WindowSpec("window", width=1.0, height=2.5, sill=0.9))
    with pytest.raises(ValueError, match="fit"):
        room_planes(box_floor(), 2.8, WindowSpec("window", width=5.0))


def test_window_irradiance_uniform_sky():
    env = apply_calibration(RadianceImage(np.full((64, 128, 3), 100.0)), 1.0)
    # uniform radiance L on a plane gives pi L
    assert window_irradiance(env, None) == pytest.approx(math.pi * 100, rel=1e-3)
    _, win = room_planes(box_floor(), 2.8, WINDOW)
    assert window_irradiance(env, win) == pytest.approx(math.pi * 100, rel=1e-3)


def fixture_scene(h=128, items=()):
    floor = box_floor()
    env = sky_panorama(256, 512)
    px, _ = render_room_panorama(floor, h, 2 * h, 2.8, WINDOW, env)
    pano = apply_calibration(RadianceImage(px), 1.0)
    return floor, env, pano, build_scene(floor, pano, items, env, WINDOW, texel_size=0.01)


def test_reprojection_round_trip():
    floor, env, pano, scene = fixture_scene(256)
    back, hit = reproject_textures(scene, 256, 512)
    keep = ndimage.binary_erosion(hit, np.ones((5, 5)))
    err = back[keep] - pano.pixels[keep]
    rms = np.sqrt(np.mean(err ** 2)) / np.sqrt(np.mean(pano.pixels[keep] ** 2))
    assert rms < 0.02
    assert (~hit).any()  # the window is open


def test_albedo_from_texels():
    floor, env, pano, scene = fixture_scene(64)
    E = scene.irradiance
    assert E == pytest.approx(window_irradiance(env, scene.window))
    for p in scene.planes:
        assert p.albedo.min() >= 0 and p.albedo.max() <= 1
        np.testing.assert_allclose(p.albedo, np.clip(np.pi * p.radiance / E, 0, 1))
    assert scene.items == [] and scene.triangles()[0].shape[0] == sum(len(p.triangles) for p in scene.planes)


def test_hidden_texels_are_flagged():
    L = FloorPolygon(np.array([[0, 0], [6, 0], [6, 2], [3, 2], [3, 5], [0, 5.0]]), camera=(1.0, 4.0, 1.6))
    env = sky_panorama(64, 128)
    px, _ = render_room_panorama(L, 64, 128, 2.8, None, env)
    scene = build_scene(L, apply_calibration(RadianceImage(px), 1.0), (), env, None, texel_size=0.1)
    assert any("hidden" in f for f in scene.flags)
    assert scene.closed


def test_scene_save_load_and_rad(tmp_path):
    item = PlacedItem(FurnitureItem("sofa", 1.8, 0.8, 0.7, albedo=(0.3, 0.2, 0.1)), 0.0, (0.0, 1.4))
    floor, env, pano, scene = fixture_scene(32, [item])
    save_scene(tmp_path / "scene.json", scene)
    back = load_scene(tmp_path / "scene.json")
    assert len(back.planes) == 6 and back.window is not None
    np.testing.assert_array_equal(back.planes[0].albedo, scene.planes[0].albedo)
    np.testing.assert_array_equal(back.triangles()[0], scene.triangles()[0])
    export_rad(tmp_path / "scene.rad", scene)
    text = (tmp_path / "scene.rad").read_text()
    assert "colorpict env_pic" in text and "sofa_mat polygon" in text
    n_tris = len(scene.triangles()[0])
    assert text.count(" polygon ") == n_tris
    assert (tmp_path / "latlong.cal").exists()
