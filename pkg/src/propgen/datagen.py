"""Physics-based dataset factory.

Builds the synthetic reference fleet (30 designs across five hull
categories), learns a PCA latent space over their 162-dim design vectors,
samples new geometries from that space, labels every sample with the BEM
solver, and writes the two task-specific CSV datasets (surrogate and
generative) with leakage-free per-design splits, fitted standardizers and a
JSON manifest. Everything is deterministic in the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from propgen.geometry import (
    DESIGN_DIM,
    FEATURES,
    RADIAL_GRID,
    DesignVector,
    PropellerSpec,
    flatten,
    is_physical,
    unflatten,
)
from propgen.hydro import evaluate_curve

SURROGATE_FILE = "surrogate.csv"
GENERATIVE_FILE = "generative.csv"
MANIFEST_FILE = "manifest.json"

SURROGATE_EXTRA_COLUMNS = ["D", "B", "J"]
TARGET_COLUMNS = ["KT", "KQ", "eta"]
CONDITION_COLUMNS = ["J", "KT", "KQ", "eta", "D", "B"]
DESIGN_COLUMNS = [f"d{i}" for i in range(DESIGN_DIM)]


@dataclass(frozen=True)
class HullCategory:
    """One row of the reference-fleet summary: counts, global-parameter
    ranges, and the hand-specified blade-shape constants for the category."""

    name: str
    count: int
    diameter_mm: tuple
    blades: tuple
    rpm: tuple
    power_kw: tuple
    chord_scale: float
    tip_chord: float
    pitch_level: float
    pitch_rise: float
    pitch_washout: float
    thick_hub: float
    camber_scale: float
    rake_tip: float


# Tip skew shared by the whole fleet. Skew does not enter the momentum
# solver, so varying it (in degrees) would only pour inert variance into the
# latent space and starve the load-bearing features of modes.
SKEW_TIP_DEG = 13.0

# Per-feature relative perturbation amplitude for the seeded fleet jitter.
# Pitch and chord carry the hydrodynamics; skew stays nearly common so the
# PCA spectrum concentrates on geometry the solver responds to.
PERTURB_AMPLITUDE = {
    "chord": 0.10,
    "skew": 0.01,
    "max_thickness": 0.10,
    "rake": 0.15,
    "pitch": 0.08,
    "max_camber": 0.15,
}

# Five-category fleet. Diameter/RPM/power ranges and blade counts follow the
# vessel classes the toolkit targets; blade-shape constants are hand-picked
# per class (tugs: wide, thick, low pitch; crew boats: narrow, high pitch).
HULL_CATEGORIES = (
    HullCategory(
        "Crew Boat", 10, (720.0, 1250.0), (5,), (649.0, 1033.0), (334.0, 1342.0),
        chord_scale=0.26, tip_chord=0.002, pitch_level=1.06, pitch_rise=0.10,
        pitch_washout=0.16, thick_hub=0.038, camber_scale=0.020, rake_tip=0.025,
    ),
    HullCategory(
        "Utility Vessel", 8, (760.0, 1600.0), (4, 5), (430.0, 1040.0), (224.0, 2013.0),
        chord_scale=0.30, tip_chord=0.005, pitch_level=0.90, pitch_rise=0.06,
        pitch_washout=0.10, thick_hub=0.042, camber_scale=0.028, rake_tip=0.030,
    ),
    HullCategory(
        "Catamaran", 4, (1100.0, 1295.0), (5,), (607.0, 805.0), (610.0, 1380.0),
        chord_scale=0.30, tip_chord=0.003, pitch_level=0.95, pitch_rise=0.08,
        pitch_washout=0.14, thick_hub=0.040, camber_scale=0.025, rake_tip=0.020,
    ),
    HullCategory(
        "Tug Boat", 4, (1800.0, 2250.0), (4,), (234.0, 284.0), (610.0, 759.0),
        chord_scale=0.37, tip_chord=0.012, pitch_level=0.74, pitch_rise=0.02,
        pitch_washout=0.05, thick_hub=0.049, camber_scale=0.035, rake_tip=0.040,
    ),
    HullCategory(
        "Landing Craft", 4, (1600.0, 2000.0), (4, 5), (284.0, 402.0), (501.0, 759.0),
        chord_scale=0.33, tip_chord=0.008, pitch_level=0.82, pitch_rise=0.04,
        pitch_washout=0.08, thick_hub=0.046, camber_scale=0.032, rake_tip=0.035,
    ),
)


@dataclass(frozen=True)
class ReferenceDesign:
    design: DesignVector
    hull_type: str
    diameter_m: float
    blades: int
    rpm: float
    power_kw: float


@dataclass(frozen=True)
class SurrogateSample:
    """One labeled curve point in surrogate form: 165-dim input, 3 targets."""

    input: np.ndarray  # [design_162, D, B, J]
    target: np.ndarray  # [K_T, K_Q, eta]


@dataclass(frozen=True)
class GenerativeSample:
    """One design with the condition at its duty operating point."""

    design: np.ndarray  # 162-dim
    condition: np.ndarray  # [J, K_T, K_Q, eta, D, B]


# Duty operating points are drawn from a triangular distribution over this
# advance-ratio grid, peaking at 0.6: most of the fleet runs near J = 0.6 and
# the rest spreads over the working range.
DUTY_GRID = np.round(np.arange(0.40, 0.901, 0.05), 2)
DUTY_PEAK = 0.6


def duty_weights(slope: float = 0.40) -> np.ndarray:
    """Normalized triangular weights over DUTY_GRID, maximal at DUTY_PEAK.

    The slope sets how fast weight falls off with distance from the peak;
    the default keeps the grid endpoints at a quarter of the peak weight so
    off-design duty points stay represented.
    """
    w = 1.0 - np.abs(DUTY_GRID - DUTY_PEAK) / slope
    return w / w.sum()


def blade_distributions(
    chord_scale: float,
    tip_chord: float,
    pitch_level: float,
    pitch_rise: float,
    pitch_washout: float,
    thick_hub: float,
    camber_scale: float,
    rake_tip: float,
) -> DesignVector:
    """Smooth parametric blade family used for all hand-specified designs.

    s is the span fraction from hub (0) to tip (1). The chord shape builds
    up from the hub, peaks mid-span and closes smoothly to tip_chord; pitch
    carries a mild mid-span rise and tip washout; thickness tapers to a thin
    tip; camber is a half-sine bump.
    """
    s = (RADIAL_GRID - 0.2) / 0.8
    chord = chord_scale * (0.62 + 0.85 * s - 0.35 * s**2) * (1.0 - s**2.5) ** 0.55
    chord = chord + tip_chord
    pitch = pitch_level * (1.0 + pitch_rise * s - pitch_washout * s**2)
    thickness = (thick_hub - 0.0045) * (1.0 - s) ** 1.3 + 0.0045
    camber = camber_scale * np.sin(np.pi * s) ** 0.9 + 0.008
    skew = SKEW_TIP_DEG * s**1.5
    rake = rake_tip * s
    return DesignVector(chord, skew, thickness, rake, pitch, camber)


def baseline_design() -> DesignVector:
    """The neutral reference blade: mid-fleet constants, used for solver
    regression tests and as the seed template in refinement examples."""
    return blade_distributions(
        chord_scale=0.30,
        tip_chord=0.005,
        pitch_level=0.92,
        pitch_rise=0.06,
        pitch_washout=0.10,
        thick_hub=0.042,
        camber_scale=0.027,
        rake_tip=0.028,
    )


def _perturbed(rng, design: DesignVector) -> DesignVector:
    """Multiplicative low-order polynomial bump per feature.

    Chebyshev basis on the span keeps each term bounded by its coefficient,
    so |factor - 1| never exceeds the feature's amplitude.
    """
    s = (RADIAL_GRID - 0.2) / 0.8
    u = 2.0 * s - 1.0
    basis = np.stack([np.ones_like(u), u, 2.0 * u * u - 1.0])
    parts = {}
    for name in FEATURES:
        amp = PERTURB_AMPLITUDE[name]
        coef = rng.uniform(-1.0, 1.0, size=3) * (amp / 3.0)
        parts[name] = design.feature(name) * (1.0 + coef @ basis)
    return DesignVector(**parts)


def reference_designs(seed) -> list:
    """The 30-design synthetic reference fleet, deterministic in the seed.

    Each hull category contributes its count of designs: the category's
    hand-specified baseline with a seeded smooth perturbation, plus diameter,
    blade count, RPM and engine power drawn within the category's ranges.
    """
    rng = np.random.default_rng(seed)
    fleet = []
    for cat in HULL_CATEGORIES:
        base = blade_distributions(
            cat.chord_scale,
            cat.tip_chord,
            cat.pitch_level,
            cat.pitch_rise,
            cat.pitch_washout,
            cat.thick_hub,
            cat.camber_scale,
            cat.rake_tip,
        )
        for _ in range(cat.count):
            design = _perturbed(rng, base)
            diameter = rng.uniform(*cat.diameter_mm) / 1000.0
            blades = int(rng.choice(list(cat.blades)))
            rpm = float(rng.uniform(*cat.rpm))
            power = float(rng.uniform(*cat.power_kw))
            if not is_physical(design):
                raise RuntimeError(f"reference design for {cat.name} is unphysical")
            fleet.append(
                ReferenceDesign(design, cat.name, diameter, blades, rpm, power)
            )
    return fleet


@dataclass
class PcaModel:
    """Mean-centered PCA over flattened design vectors."""

    mean: np.ndarray
    components: np.ndarray  # (k, 162), orthonormal rows
    singular_values: np.ndarray  # (k,)
    explained_variance_ratio: np.ndarray  # (k,)
    n_train: int

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def mode_stds(self) -> np.ndarray:
        """Per-mode standard deviation of the training data (ddof=1)."""
        return self.singular_values / np.sqrt(self.n_train - 1)

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T

    def inverse_transform(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) @ self.components + self.mean


def fit_pca(designs, variance_target: float = 0.99) -> PcaModel:
    """Mean-centered SVD; keeps the smallest k covering the variance target."""
    x = np.asarray(designs, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("need at least two designs to fit a PCA")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    total = float(np.sum(s * s))
    if total <= 0.0:
        raise ValueError("degenerate input: all designs identical")
    ratios = (s * s) / total
    cum = np.cumsum(ratios)
    meets = np.nonzero(cum >= variance_target - 1e-12)[0]
    k = int(meets[0]) + 1 if meets.size else len(s)
    return PcaModel(
        mean=mean,
        components=vt[:k].copy(),
        singular_values=s[:k].copy(),
        explained_variance_ratio=ratios[:k].copy(),
        n_train=x.shape[0],
    )


def sample_designs(pca: PcaModel, n: int, seed, spread: float = 1.0):
    """Draw n physical PropellerSpecs from the PCA latent space.

    Latent modes are sampled independently from normal laws with standard
    deviation spread * (that mode's training std); blade count is uniform on
    {4, 5} and diameter uniform on [0.5, 2.5] m. Unphysical draws are
    rejected and redrawn. Returns (specs, n_rejected); aborts if the
    rejection rate exceeds 90%.
    """
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    stds = spread * pca.mode_stds()
    specs = []
    n_rejected = 0
    attempts = 0
    while len(specs) < n:
        attempts += 1
        if attempts >= 50 and n_rejected / attempts > 0.9:
            raise RuntimeError(
                f"latent sampling rejection rate {n_rejected}/{attempts} "
                "exceeds 90%; latent space or physical bounds look broken"
            )
        z = rng.standard_normal(pca.k) * stds
        design = unflatten(pca.inverse_transform(z))
        if not is_physical(design):
            n_rejected += 1
            continue
        diameter = float(rng.uniform(0.5, 2.5))
        blades = int(rng.choice([4, 5]))
        specs.append(PropellerSpec(design, diameter, blades))
    return specs, n_rejected


@dataclass
class Standardizer:
    """Per-column zero-mean unit-variance scaling fitted on training rows.

    Columns with (near) zero variance keep std = 1 and are flagged rather
    than dividing by zero.
    """

    mean: np.ndarray
    std: np.ndarray
    flagged: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ValueError("need a nonempty 2-d array")
        mean = x.mean(axis=0)
        std = x.std(axis=0, ddof=0)
        flagged = std < 1e-12
        std = np.where(flagged, 1.0, std)
        return cls(mean=mean, std=std, flagged=flagged)

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse_transform(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "flagged": [bool(f) for f in self.flagged],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            std=np.asarray(d["std"], dtype=np.float64),
            flagged=np.asarray(d["flagged"], dtype=bool),
        )


@dataclass
class DatasetManifest:
    """Everything needed to reload and interpret a written dataset: the seed,
    per-split row counts, the per-design split assignment (all rows of one
    design share a split), and the fitted standardizers."""

    seed: int
    n_designs: int
    n_rejected: int
    pca_modes: int
    surrogate_rows: dict
    generative_rows: dict
    surrogate_split_by_design: list
    generative_split_by_design: list
    standardizers: dict = field(repr=False)
    files: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "schema": "propeller-dataset-v1",
            "seed": self.seed,
            "n_designs": self.n_designs,
            "n_rejected": self.n_rejected,
            "pca_modes": self.pca_modes,
            "surrogate_rows": self.surrogate_rows,
            "generative_rows": self.generative_rows,
            "surrogate_split_by_design": self.surrogate_split_by_design,
            "generative_split_by_design": self.generative_split_by_design,
            "standardizers": self.standardizers,
            "files": self.files,
        }
        return json.dumps(payload, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        if d.get("schema") != "propeller-dataset-v1":
            raise ValueError(f"unexpected manifest schema {d.get('schema')!r}")
        return cls(
            seed=d["seed"],
            n_designs=d["n_designs"],
            n_rejected=d["n_rejected"],
            pca_modes=d["pca_modes"],
            surrogate_rows=d["surrogate_rows"],
            generative_rows=d["generative_rows"],
            surrogate_split_by_design=d["surrogate_split_by_design"],
            generative_split_by_design=d["generative_split_by_design"],
            standardizers=d["standardizers"],
            files=d["files"],
        )


def _split_labels(n: int, fractions: dict, rng) -> np.ndarray:
    """Assign one split label per design; counts are rounded fractions."""
    names = list(fractions.keys())
    counts = [int(round(fractions[name] * n)) for name in names[:-1]]
    counts.append(n - sum(counts))
    labels = np.empty(n, dtype=object)
    perm = rng.permutation(n)
    start = 0
    for name, count in zip(names, counts):
        labels[perm[start : start + count]] = name
        start += count
    return labels


def build_dataset(n_designs: int, seed: int, out_dir) -> DatasetManifest:
    """Sample, solver-label and write the surrogate and generative datasets.

    Surrogate table: one row per converged working-range curve point
    (K_T > 0 and K_Q > 0) across the full advance-ratio sweep. Positive
    torque keeps the J-K_T-K_Q-eta identity well defined on every row;
    positive thrust drops the beyond-stall curve endpoint, where eta
    diverges as K_Q approaches zero and would poison standardized targets.

    Generative table: one row per design, labeled at that design's duty
    operating point (the valid curve point nearest a seeded draw from the
    duty distribution). A single condition per design keeps the
    condition-to-geometry map learnable: when every curve point of every
    design becomes a row, the operating point explains almost all of the
    label variance and a conditional generator can meet the condition while
    ignoring the geometry it is supposed to encode.

    All rows of one design share a split; standardizers are fitted on
    training rows only.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    ss = np.random.SeedSequence(seed)
    refs_ss, sample_ss, split_surr_ss, split_gen_ss, duty_ss = ss.spawn(5)

    fleet = reference_designs(refs_ss)
    pca = fit_pca([flatten(ref.design) for ref in fleet])
    specs, n_rejected = sample_designs(pca, n_designs, sample_ss)
    duty_targets = np.random.default_rng(duty_ss).choice(
        DUTY_GRID, size=n_designs, p=duty_weights()
    )

    design_rows = []
    extra_rows = []
    target_rows = []
    design_index = []
    gen_design_rows = []
    gen_cond_rows = []
    gen_design_index = []
    for idx, spec in enumerate(specs):
        curve = evaluate_curve(spec)
        flat = flatten(spec.design)
        valid = [p for p in curve if p.converged and p.kt > 0.0 and p.kq > 0.0]
        for p in valid:
            design_rows.append(flat)
            extra_rows.append((spec.diameter_m, float(spec.blades), p.J))
            target_rows.append((p.kt, p.kq, p.eta))
            design_index.append(idx)
        if valid:
            js = np.array([p.J for p in valid])
            duty = valid[int(np.argmin(np.abs(js - duty_targets[idx])))]
            gen_design_rows.append(flat)
            gen_cond_rows.append(
                (duty.J, duty.kt, duty.kq, duty.eta,
                 spec.diameter_m, float(spec.blades))
            )
            gen_design_index.append(idx)

    designs = np.asarray(design_rows)
    extras = np.asarray(extra_rows)
    targets = np.asarray(target_rows)
    design_index = np.asarray(design_index)
    gen_designs = np.asarray(gen_design_rows)
    gen_conditions = np.asarray(gen_cond_rows)
    gen_design_index = np.asarray(gen_design_index)

    surr_split = _split_labels(
        n_designs, {"train": 0.70, "val": 0.15, "test": 0.15},
        np.random.default_rng(split_surr_ss),
    )
    gen_split = _split_labels(
        n_designs, {"train": 0.80, "val": 0.20}, np.random.default_rng(split_gen_ss)
    )
    surr_row_split = surr_split[design_index]
    gen_row_split = gen_split[gen_design_index]

    surr_inputs = np.hstack([designs, extras])

    surr_train = surr_row_split == "train"
    gen_train = gen_row_split == "train"
    standardizers = {
        "surrogate_input": Standardizer.fit(surr_inputs[surr_train]).to_dict(),
        "surrogate_target": Standardizer.fit(targets[surr_train]).to_dict(),
        "generative_design": Standardizer.fit(gen_designs[gen_train]).to_dict(),
        "generative_condition": Standardizer.fit(
            gen_conditions[gen_train]
        ).to_dict(),
    }

    surr_df = pd.DataFrame(surr_inputs, columns=DESIGN_COLUMNS + SURROGATE_EXTRA_COLUMNS)
    for col, vals in zip(TARGET_COLUMNS, targets.T):
        surr_df[col] = vals
    surr_df["split"] = surr_row_split
    # full repr precision: reloaded values must match the solver outputs and
    # fitted standardizers bit-exactly
    surr_df.to_csv(out / SURROGATE_FILE, index=False)

    gen_df = pd.DataFrame(gen_designs, columns=DESIGN_COLUMNS)
    for col, vals in zip(CONDITION_COLUMNS, gen_conditions.T):
        gen_df[col] = vals
    gen_df["split"] = gen_row_split
    gen_df.to_csv(out / GENERATIVE_FILE, index=False)

    def per_split(split_col, names):
        return {name: int(np.sum(split_col == name)) for name in names}

    manifest = DatasetManifest(
        seed=int(seed),
        n_designs=int(n_designs),
        n_rejected=int(n_rejected),
        pca_modes=pca.k,
        surrogate_rows=per_split(surr_row_split, ["train", "val", "test"]),
        generative_rows=per_split(gen_row_split, ["train", "val"]),
        surrogate_split_by_design=[str(s) for s in surr_split],
        generative_split_by_design=[str(s) for s in gen_split],
        standardizers=standardizers,
        files={"surrogate": SURROGATE_FILE, "generative": GENERATIVE_FILE},
    )
    (out / MANIFEST_FILE).write_text(manifest.to_json())
    return manifest


@dataclass
class SurrogateData:
    """In-memory view of the surrogate CSV plus its fitted standardizers."""

    x: np.ndarray  # (n, 165)
    y: np.ndarray  # (n, 3)
    split: np.ndarray
    x_std: Standardizer
    y_std: Standardizer
    manifest: DatasetManifest

    def rows(self, split: str):
        sel = self.split == split
        return self.x[sel], self.y[sel]


@dataclass
class GenerativeData:
    """In-memory view of the generative CSV plus its fitted standardizers."""

    designs: np.ndarray  # (n, 162)
    conditions: np.ndarray  # (n, 6): J, KT, KQ, eta, D, B
    split: np.ndarray
    design_std: Standardizer
    condition_std: Standardizer
    manifest: DatasetManifest

    def rows(self, split: str):
        sel = self.split == split
        return self.designs[sel], self.conditions[sel]


def load_manifest(data_dir) -> DatasetManifest:
    return DatasetManifest.from_json(
        (Path(data_dir) / MANIFEST_FILE).read_text()
    )


def load_surrogate_data(data_dir) -> SurrogateData:
    data_dir = Path(data_dir)
    manifest = load_manifest(data_dir)
    df = pd.read_csv(data_dir / manifest.files["surrogate"])
    x = df[DESIGN_COLUMNS + SURROGATE_EXTRA_COLUMNS].to_numpy(dtype=np.float64)
    y = df[TARGET_COLUMNS].to_numpy(dtype=np.float64)
    return SurrogateData(
        x=x,
        y=y,
        split=df["split"].to_numpy(),
        x_std=Standardizer.from_dict(manifest.standardizers["surrogate_input"]),
        y_std=Standardizer.from_dict(manifest.standardizers["surrogate_target"]),
        manifest=manifest,
    )


def load_generative_data(data_dir) -> GenerativeData:
    data_dir = Path(data_dir)
    manifest = load_manifest(data_dir)
    df = pd.read_csv(data_dir / manifest.files["generative"])
    return GenerativeData(
        designs=df[DESIGN_COLUMNS].to_numpy(dtype=np.float64),
        conditions=df[CONDITION_COLUMNS].to_numpy(dtype=np.float64),
        split=df["split"].to_numpy(),
        design_std=Standardizer.from_dict(manifest.standardizers["generative_design"]),
        condition_std=Standardizer.from_dict(
            manifest.standardizers["generative_condition"]
        ),
        manifest=manifest,
    )
