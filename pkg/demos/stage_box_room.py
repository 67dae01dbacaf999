"""
End-to-end staging of the synthetic box room
============================================

Runs every stage from one manifest: calibrate, mask, inpaint, layout and
render. A second run finds every stage unchanged and leaves the artifacts
byte-for-byte as they were.

    python demos/stage_box_room.py [output-dir] [spp]
"""
import sys
from pathlib import Path

from homestage.cli import inspect_file
from homestage.fixtures import write_box_room_fixture
from homestage.pipeline import run_pipeline

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out") / "staging"
spp = int(sys.argv[2]) if len(sys.argv) > 2 else 16
manifest = write_box_room_fixture(out, height=128, spp=spp, render_width=256)

first = run_pipeline(manifest)
print("ran:", ", ".join(first.ran))
again = run_pipeline(manifest)
print("second run skipped:", ", ".join(again.skipped))

print(inspect_file(first.output / "staged.hdr"))
print(f"preview: {first.output / 'preview.png'}")
