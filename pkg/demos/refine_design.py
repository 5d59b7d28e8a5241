"""Repair a too-thin blade against the minimum-thickness rule with CMA-ES.

Run from the repository root:

    python3 demos/refine_design.py

Uses the solver directly as the fitness evaluator (no surrogate to
train), so the search budget is kept small; takes about a minute.
"""

import dataclasses

import numpy as np

from propgen import refine
from propgen.datagen import baseline_design, reference_designs
from propgen.geometry import PropellerSpec, flatten
from propgen.hydro import DesignBrief, target_condition

# a plausible coastal-vessel duty for a 2 m, 4-blade bronze screw
brief = DesignBrief(
    v_a=6.0, t_req=75000.0, n=5.0, p_avail=1.0e6,
    diameter_m=2.0, blades=4, material="manganese bronze",
)
target = target_condition(brief)
print(f"targets: J* = {target.j_star:.3f}  KT* = {target.kt_star:.4f}  "
      f"KQ* budget = {target.kq_star:.4f}")

# start from the fleet baseline with blades shaved to 35% thickness
thin = dataclasses.replace(
    baseline_design(), max_thickness=baseline_design().max_thickness * 0.35
)
seed_spec = PropellerSpec(thin, brief.diameter_m, brief.blades)

material = refine.get_material(brief.material)
inputs = refine.extract_thickness_inputs(seed_spec, brief)
t_min = refine.min_thickness(inputs, material)
print(f"seed thickness at 0.25R: {inputs.t_25:.1f} mm "
      f"(rule minimum {t_min[0]:.1f} mm)")
print(f"seed thickness at 0.60R: {inputs.t_60:.1f} mm "
      f"(rule minimum {t_min[1]:.1f} mm)\n")

fleet_std = np.array([flatten(r.design) for r in reference_designs(0)]).std(axis=0)
report = refine.refine(
    [seed_spec], brief,
    evaluator=refine.solver_point_evaluator(),
    training_std=fleet_std,
    budget=1500, seed=0,
)
best = report.best()
print(f"refined in {best.evaluations} solver evaluations "
      f"({best.stop_reason}); fitness {best.fitness:.4f}")
print(f"thickness now {best.t_25:.1f} / {best.t_60:.1f} mm "
      f"vs minima {best.t_min_25:.1f} / {best.t_min_60:.1f} mm "
      f"-> rule satisfied: {best.thickness_ok}")
print(f"solver audit: KT = {best.solver_kt:.4f} "
      f"(thrust error {best.thrust_error * 100:.2f}%), "
      f"eta = {best.solver_eta:.4f}, BAR = {best.bar:.3f}")
print(f"meets every hard constraint: {best.feasible}")
