"""Sweep the open-water solver over a propeller and chart the result.

Run from the repository root:

    python3 demos/open_water_curve.py

Writes demo_curve.csv and demo_curve.svg next to where you run it.
"""

import numpy as np

from propgen.datagen import baseline_design
from propgen.geometry import PropellerSpec, blade_area_ratio
from propgen.hydro import evaluate_curve, save_curve
from propgen.plotting import chart_from_curve, write_chart

spec = PropellerSpec(baseline_design(), diameter_m=2.0, blades=4)
print(f"baseline 4-blade screw, D = {spec.diameter_m} m, "
      f"BAR = {blade_area_ratio(spec):.3f}")

curve = evaluate_curve(spec)
print(f"{len(curve)} points until thrust crosses zero\n")

print(f"{'J':>5} {'KT':>8} {'10KQ':>8} {'eta':>7}")
for p in curve:
    tag = "" if p.converged else "  (not converged)"
    print(f"{p.J:>5.2f} {p.kt:>8.4f} {10 * p.kq:>8.4f} {p.eta:>7.4f}{tag}")

best = max((p for p in curve if p.converged and p.kt > 0), key=lambda p: p.eta)
print(f"\npeak efficiency {best.eta:.4f} at J = {best.J:.2f}")

save_curve("demo_curve.csv", curve)
write_chart("demo_curve.svg", chart_from_curve(curve))
print("wrote demo_curve.csv and demo_curve.svg")

# the curve is nondimensional: rescaling the screw changes nothing
big = PropellerSpec(spec.design, diameter_m=4.6, blades=4)
big_curve = evaluate_curve(big)
drift = max(
    abs(a.kt - b.kt) + abs(a.kq - b.kq)
    for a, b in zip(curve, big_curve)
)
print(f"diameter invariance check: max |dKT|+|dKQ| = {drift:.2e}")
assert drift < 1e-12
