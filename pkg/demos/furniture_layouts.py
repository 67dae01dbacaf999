"""
Rule-based furniture layouts
============================

A handful of rules (which wall, which way to face, where along the wall,
how far from it) place boxes in an L-shaped room. Resampling the free
parameters gives alternative layouts; every one is checked for containment
and overlaps.

    python demos/furniture_layouts.py
"""
import numpy as np

from homestage.layout import (FloorPolygon, FurnitureItem, PlacementRule, enumerate_layouts, generate_layout,
                              validate_layout)

room = FloorPolygon(np.array([[0, 0], [6, 0], [6, 3], [3.5, 3], [3.5, 5], [0, 5.0]]),
                    ("wall", "window", "wall", "wall", "wall", "wall"), camera=(1.5, 1.5, 1.6))
items = {i.id: i for i in [FurnitureItem("sofa", 2.2, 0.9), FurnitureItem("table", 1.2, 0.7, 0.45),
                           FurnitureItem("desk", 1.4, 0.6, 0.75), FurnitureItem("shelf", 0.9, 0.35, 1.8)]}
rules = [
    PlacementRule("sofa", 5, "face-interior", 0.4, 0.0),   # west wall
    PlacementRule("table", 5, "face-interior", 0.4, 0.5),  # in front of the sofa
    PlacementRule("desk", "window", "face-window", 0.5, 0.0),
    PlacementRule("shelf", 3, "align-edge", 0.2, 0.0),
]

res = generate_layout(room, rules, items)
for p in res.placed:
    print(f"{p.item.id:>6}: center ({p.t[0]:5.2f}, {p.t[1]:5.2f}) m, facing {np.degrees(p.theta):6.1f} deg")
for item, why in res.skipped.items():
    print(f"{item:>6}: skipped, {why}")
report = validate_layout(room, res.placed)
print("valid" if report.ok else report.violations, *report.warnings, sep="\n  ")

# Alternatives: u and v are redrawn per rule, positions change, rules hold.
for k, alt in enumerate(enumerate_layouts(room, rules, items, count=3, seed=1)):
    names = ", ".join(f"{p.item.id}@({p.t[0]:.1f},{p.t[1]:.1f})" for p in alt.placed)
    print(f"layout {k}: {names}; ok={validate_layout(room, alt.placed).ok}")
