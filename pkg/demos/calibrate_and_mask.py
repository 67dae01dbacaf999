"""
From a relative capture to a furniture-removal mask
===================================================

A synthetic box room stands in for a tripod capture. We calibrate it with
a luminance reading on a wall patch, look at a false-color map, then build
the target mask (furniture on the floor, tripod cap, direct sunlight) and
fill it.

    python demos/calibrate_and_mask.py [output-dir]
"""
import sys
from pathlib import Path

import numpy as np

from homestage import imageio
from homestage.fixtures import FIXTURE_K, write_box_room_fixture
from homestage.hdr import apply_calibration, compute_k1, false_color, luminance_map
from homestage.inpaint import inpaint_panorama
from homestage.masks import (combine_masks, filter_contours_by_floor, floor_boundary_from_layout, read_corners,
                             sunlight_mask, tripod_mask)
from homestage.render import auto_exposure, tone_map_preview
from homestage.rgbe import read_hdr, write_hdr

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
src = out / "box_room"
manifest = write_box_room_fixture(src)

# The capture is stored relative: pixel values are proportional to radiance
# but carry no unit. One spot-meter reading fixes the scale.
capture = read_hdr(src / "capture.hdr")
target = imageio.read_mask(src / "target.png")
import json
measured = json.loads(manifest.read_text())["calibrate"]["measured_luminance"]
factor = compute_k1(capture, target, measured)
print(f"k1 = {factor.k1:.4f} (the fixture was divided by {FIXTURE_K})")
pano = apply_calibration(capture, factor)
write_hdr(out / "calibrated.hdr", pano)

lum = luminance_map(pano)
print(f"luminance: median {np.median(lum):.1f}, max {lum.max():.0f} cd/m^2")
imageio.write_ldr(out / "false_color.png", false_color(lum, 20, 2000))

# Masks. The furniture segmentation would normally come from a detector;
# here it is the planted sofa. Only blobs touching the floor are kept.
h, w = pano.shape
floor = floor_boundary_from_layout(read_corners(src / "corners.txt"), (h, w))
furniture = filter_contours_by_floor(imageio.read_mask(src / "furniture.png"), floor)
sun = sunlight_mask(pano, 2000.0)
tripod = tripod_mask((h, w))
target_mask = combine_masks([furniture, sun, tripod], dilation=2)
for m in (furniture, sun, tripod, target_mask):
    print(f"{m.label or 'combined':>10}: {100 * m.coverage:5.2f}% of the panorama")
imageio.write_mask(out / "target_mask.png", target_mask)

# Floor pixels get a periodic fill in a downward view, the rest diffuses
# without crossing the wall-floor boundary.
empty = inpaint_panorama(pano, target_mask, floor, view_size=2 * h)
write_hdr(out / "empty.hdr", empty)
imageio.write_ldr(out / "empty.png", tone_map_preview(empty, auto_exposure(empty)))
print(f"wrote {out}/calibrated.hdr, false_color.png, target_mask.png, empty.hdr")
