"""Synthesize a small solver-labeled dataset and fit the surrogate on it.

Run from the repository root:

    python3 demos/dataset_and_surrogate.py

Uses a few hundred designs so it finishes in about a minute; the full
study scale is 3000 (see the `pipeline` CLI subcommand).
"""

import tempfile
import time

from propgen.datagen import build_dataset, load_surrogate_data
from propgen.surrogate import SurrogateHyper, test_metrics, train_surrogate

t0 = time.time()
with tempfile.TemporaryDirectory() as data_dir:
    manifest = build_dataset(n_designs=500, seed=0, out_dir=data_dir)
    print(f"dataset: {manifest.n_designs} designs "
          f"({manifest.n_rejected} latent samples rejected), "
          f"PCA modes kept: {manifest.pca_modes}")
    print(f"surrogate rows per split: {manifest.surrogate_rows}")
    print(f"generative rows per split: {manifest.generative_rows}")

    data = load_surrogate_data(data_dir)
    model = train_surrogate(data, SurrogateHyper(epochs=25, seed=0))
    scores = test_metrics(model, data.rows("test"))

print(f"\ntrained in {time.time() - t0:.0f}s; held-out test metrics:")
for target, m in scores.items():
    print(f"  {target:>4}: R2 = {m['r2']:.4f}  rel L2 = {m['rel_l2'] * 100:.2f}%")
print("\n(eta is the hardest target: it divides two learned quantities)")
