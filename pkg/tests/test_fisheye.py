import math

import numpy as np
import pytest

from homestage.fisheye import (
    ColorCorrection, FisheyeImage, VignettingModel, angle_to_radius, correct_nd_color, correct_vignetting,
    equidistant_to_hemispherical, fisheye_to_latlong, hemisphere_integral, hemispherical_to_equidistant,
    radius_to_angle,
)
from homestage.hdr import RadianceImage


def render_sky(size, projection, sky):
    """Forward model: fisheye image of a sky function sky(theta, alpha) -> rgb."""
    fe = FisheyeImage.centered(np.zeros((size, size, 3)), projection=projection)
    r, alpha = fe.polar()
    inside = r <= fe.radius
    theta = radius_to_angle(np.minimum(r, fe.radius), fe.radius, fe.projection)
    px = np.where(inside[..., None], sky(theta, alpha), 0.0)
    return fe.with_pixels(px)


def smooth_sky(theta, alpha):
    base = 1.0 + 0.5 * np.cos(theta) + 0.2 * np.sin(theta) * np.cos(alpha - 0.7)
    return np.stack([base, 0.9 * base, 1.1 * base + 0.1 * np.cos(theta) ** 2], axis=-1)


def test_identity_vignetting_is_noop():
    fe = render_sky(64, "fisheye-equidistant", smooth_sky)
    out = correct_vignetting(fe, VignettingModel())
    np.testing.assert_array_equal(out.image.pixels, fe.image.pixels)


def test_cos4_rim_scaling():
    model = VignettingModel.cos4()
    assert 1 / model.gain(math.radians(60)) == pytest.approx(16.0)
    # the pixel whose center sits at exactly 60 degrees off-axis
    fe = FisheyeImage(RadianceImage(np.ones((1, 7, 3)), projection="fisheye-equidistant"), (0.5, 0.5), 9.0)
    theta, _ = fe.off_axis()
    col = 6  # r = 6 -> theta = 6/9 * 90 = 60 deg
    assert math.degrees(theta[0, col]) == pytest.approx(60.0)
    out = correct_vignetting(fe, model)
    assert out.image.pixels[0, col, 0] == pytest.approx(16.0)
    assert out.image.pixels[0, 0, 0] == pytest.approx(1.0)


def test_vignetting_forward_simulation():
    model = VignettingModel((1.0, 0.0, -0.12, 0.0, -0.01))
    fe = render_sky(128, "fisheye-equidistant", lambda t, a: np.full(t.shape + (3,), 5.0))
    theta, inside = fe.off_axis()
    darkened = fe.with_pixels(fe.image.pixels * model.gain(theta)[..., None])
    fixed = correct_vignetting(darkened, model).image.pixels[inside]
    np.testing.assert_allclose(fixed, 5.0, rtol=1e-3)


def test_vignetting_rejects_bad_models():
    with pytest.raises(ValueError):
        VignettingModel((0.9, 0.1))  # gain(0) != 1
    with pytest.raises(ValueError):
        VignettingModel((1.0, -1.0))  # crosses zero before pi/2


def test_nd_color_examples():
    fe = render_sky(32, "fisheye-equidistant", smooth_sky)
    same = correct_nd_color(fe, ColorCorrection(np.eye(3)))
    np.testing.assert_array_equal(same.image.pixels, fe.image.pixels)
    filtered = fe.with_pixels(fe.image.pixels * 1e-3)
    np.testing.assert_allclose(correct_nd_color(filtered, ColorCorrection.from_nd(3.0)).image.pixels,
                               fe.image.pixels, rtol=1e-12)
    cast = np.array([1100.0, 1000.0, 950.0])
    through_filter = fe.with_pixels(fe.image.pixels / cast)
    back = correct_nd_color(through_filter, ColorCorrection(cast)).image.pixels
    np.testing.assert_allclose(back, fe.image.pixels, rtol=1e-6)
    with pytest.raises(ValueError, match="singular"):
        ColorCorrection(np.array([[1, 2, 3], [2, 4, 6], [0, 0, 1.0]]))


def test_vignetting_commutes_with_diagonal_color():
    fe = render_sky(48, "fisheye-equidistant", smooth_sky)
    vm = VignettingModel.cos4()
    cc = ColorCorrection([1100.0, 1000.0, 950.0])
    a = correct_nd_color(correct_vignetting(fe, vm), cc).image.pixels
    b = correct_vignetting(correct_nd_color(fe, cc), vm).image.pixels
    np.testing.assert_allclose(a, b, rtol=1e-12)


def test_mapping_fixed_points():
    R = 100.0
    assert angle_to_radius(0.0, R, "hemispherical") == 0.0
    assert angle_to_radius(math.pi / 2, R, "equidistant") == pytest.approx(R)
    assert angle_to_radius(math.pi / 2, R, "hemispherical") == pytest.approx(R)
    assert angle_to_radius(math.pi / 2, R, "equisolid") == pytest.approx(R)
    # theta = 45 deg: equidistant source radius R/2, hemispherical destination R*sin(45)
    assert angle_to_radius(math.pi / 4, R, "equidistant") == pytest.approx(R / 2)
    assert angle_to_radius(math.pi / 4, R, "hemispherical") == pytest.approx(0.70710678 * R)


def test_equidistant_to_hemispherical_moves_ring():
    # a thin bright ring at 45 degrees in the equidistant image must land at r = R sin 45
    size = 401
    sky = lambda t, a: np.repeat(np.exp(-((t - math.pi / 4) / 0.02) ** 2)[..., None], 3, axis=-1)
    fe = render_sky(size, "fisheye-equidistant", sky)
    out = equidistant_to_hemispherical(fe)
    assert out.image.projection == "fisheye-hemispherical"
    r, _ = out.polar()
    row = out.image.pixels[size // 2, :, 0]
    peak_r = r[size // 2, np.argmax(row[size // 2:]) + size // 2]
    assert peak_r == pytest.approx(out.radius * math.sin(math.pi / 4), abs=1.0)


def test_wrong_projection_rejected():
    fe = render_sky(16, "fisheye-hemispherical", smooth_sky)
    with pytest.raises(ValueError):
        equidistant_to_hemispherical(fe)
    fe2 = render_sky(16, "fisheye-equidistant", smooth_sky)
    with pytest.raises(ValueError):
        fisheye_to_latlong(fe2, 32)


@pytest.mark.parametrize("weight", ["radiance", "cosine"])
def test_remap_preserves_hemisphere_integral(weight):
    fe = render_sky(512, "fisheye-equidistant", smooth_sky)
    hemi = equidistant_to_hemispherical(fe)
    a = hemisphere_integral(fe, weight)
    b = hemisphere_integral(hemi, weight)
    np.testing.assert_allclose(b, a, rtol=0.01)


def test_quadrature_matches_analytic_uniform_sky():
    fe = render_sky(256, "fisheye-equidistant", lambda t, a: np.ones(t.shape + (3,)))
    np.testing.assert_allclose(hemisphere_integral(fe, "radiance"), 2 * np.pi, rtol=1e-3)
    np.testing.assert_allclose(hemisphere_integral(fe, "cosine"), np.pi, rtol=1e-3)


def test_remap_round_trip():
    fe = render_sky(256, "fisheye-hemispherical", smooth_sky)
    back = equidistant_to_hemispherical(hemispherical_to_equidistant(fe))
    _, inside = fe.off_axis()
    a = back.image.pixels[inside]
    b = fe.image.pixels[inside]
    assert np.sqrt(np.mean((a - b) ** 2)) / np.sqrt(np.mean(b ** 2)) < 0.01


def test_latlong_zenith_and_uniform():
    fe = render_sky(128, "fisheye-hemispherical", lambda t, a: np.full(t.shape + (3,), 3.0))
    img, report = fisheye_to_latlong(fe, 64)
    assert img.shape == (64, 128)
    np.testing.assert_allclose(img.pixels[:32], 3.0, rtol=1e-9)
    assert report.relative_change < 0.01
    # zenith pixel lands on the top row
    peaky = render_sky(128, "fisheye-hemispherical",
                       lambda t, a: np.repeat(np.exp(-(t / 0.05) ** 2)[..., None], 3, axis=-1))
    ll, _ = fisheye_to_latlong(peaky, 64)
    assert np.unravel_index(np.argmax(ll.pixels[..., 0]), ll.shape)[0] == 0
    with pytest.raises(ValueError):
        fisheye_to_latlong(fe, 1)


def test_latlong_sun_placement():
    az, el = math.radians(120), math.radians(45)
    sun = np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])

    def sky(t, a):
        d = np.stack([np.sin(t) * np.cos(a), np.sin(t) * np.sin(a), np.cos(t)], axis=-1)
        ang = np.arccos(np.clip(d @ sun, -1, 1))
        return np.repeat((0.2 + 1e4 * (ang < math.radians(1.5)))[..., None], 3, axis=-1)

    fe = render_sky(512, "fisheye-hemispherical", sky)
    img, report = fisheye_to_latlong(fe, 256)
    h, w = img.shape
    lum = img.pixels[..., 0]
    ys, xs = np.nonzero(lum > 1e3)
    weights = lum[ys, xs]
    cx = np.average(xs + 0.5, weights=weights)
    cy = np.average(ys + 0.5, weights=weights)
    assert cx == pytest.approx(120 / 360 * w, abs=1.0)
    assert cy == pytest.approx((1 - (45 + 90) / 180) * h, abs=1.0)
    assert report.relative_change < 0.01


def test_latlong_lower_fill():
    fe = render_sky(64, "fisheye-hemispherical", smooth_sky)
    img, _ = fisheye_to_latlong(fe, 32, lower="zero")
    assert np.all(img.pixels[16:] == 0)
    img2, _ = fisheye_to_latlong(fe, 32)
    np.testing.assert_array_equal(img2.pixels[16:], np.broadcast_to(img2.pixels[15], img2.pixels[16:].shape))


def test_latlong_tilted_camera_uses_up_vector():
    # camera tilted 10 degrees; the same world sky must come out unchanged
    tilt = math.radians(10)
    up_cam = np.array([0.0, math.sin(tilt), math.cos(tilt)])
    world_sky = lambda d: 1.0 + d[..., 2]

    def sky(t, a):
        d_cam = np.stack([np.sin(t) * np.cos(a), np.sin(t) * np.sin(a), np.cos(t)], axis=-1)
        return np.repeat(world_sky(np.stack([d_cam @ [1, 0, 0], d_cam @ np.cross(up_cam, [1, 0, 0]),
                                             d_cam @ up_cam], -1))[..., None], 3, axis=-1)

    fe = render_sky(256, "fisheye-hemispherical", sky)
    img, _ = fisheye_to_latlong(fe, 64, up_direction=up_cam)
    rows = np.arange(32) + 0.5
    expected = 1.0 + np.sin(np.pi / 2 - np.pi * rows / 64)
    # stay well above the horizon where the tilted capture still has data
    np.testing.assert_allclose(img.pixels[:24, :, 0], np.broadcast_to(expected[:24, None], (24, 128)), rtol=0.01)
