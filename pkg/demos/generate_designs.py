"""Train a small conditional VAE and sample designs for a target duty.

Run from the repository root:

    python3 demos/generate_designs.py

Short training keeps this demo around a minute; expect looser condition
matching than the study-scale settings (3000 designs, 3000 epochs) used
by `propgen pipeline --scale desk`.
"""

import tempfile

import numpy as np

from propgen.cvae import CvaeHyper, generate, train_cvae
from propgen.datagen import build_dataset, load_generative_data
from propgen.geometry import PropellerSpec, unflatten
from propgen.hydro import evaluate_point

with tempfile.TemporaryDirectory() as data_dir:
    build_dataset(n_designs=500, seed=0, out_dir=data_dir)
    data = load_generative_data(data_dir)
    model = train_cvae(data, CvaeHyper(beta=0.07, epochs=400, seed=0))

# ask for moderate thrust at the design advance ratio on a 2 m, 4-blade screw
condition = np.array([0.6, 0.18, 0.64, 2.0, 4.0])
batch = generate(model, condition, n_samples=8, seed=1)
print(f"condition [J, KT, eta, D, B] = {condition.tolist()}")
print(f"{batch.n_unphysical} of {len(batch)} samples violate feature bounds\n")

print(f"{'sample':>6} {'solver KT':>10} {'KT err %':>9} {'solver eta':>11}")
for i, design in enumerate(batch):
    if not batch.physical[i]:
        print(f"{i:>6} {'skipped (unphysical)':>31}")
        continue
    spec = PropellerSpec(design, condition[3], int(condition[4]))
    point = evaluate_point(spec, condition[0])
    err = abs(point.kt - condition[1]) / condition[1] * 100.0
    print(f"{i:>6} {point.kt:>10.4f} {err:>9.2f} {point.eta:>11.4f}")
