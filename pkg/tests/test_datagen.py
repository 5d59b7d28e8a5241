"""Dataset factory tests: fleet, PCA, sampling, standardizing, file output."""

import json

import numpy as np
import pandas as pd
import pytest

from propgen.datagen import (
    CONDITION_COLUMNS,
    DESIGN_COLUMNS,
    DUTY_GRID,
    DUTY_PEAK,
    HULL_CATEGORIES,
    Standardizer,
    build_dataset,
    duty_weights,
    fit_pca,
    load_generative_data,
    load_manifest,
    load_surrogate_data,
    reference_designs,
    sample_designs,
)
from propgen.geometry import blade_area_ratio, flatten, is_physical


@pytest.fixture(scope="module")
def fleet():
    return reference_designs(0)


@pytest.fixture(scope="module")
def fleet_pca(fleet):
    return fit_pca([flatten(r.design) for r in fleet])


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    manifest = build_dataset(12, seed=11, out_dir=out)
    return out, manifest


# ------------------------------------------------------------------- fleet


def test_fleet_has_thirty_physical_designs(fleet):
    assert len(fleet) == 30
    assert all(is_physical(r.design) for r in fleet)


def test_fleet_respects_category_table(fleet):
    by_cat = {}
    for r in fleet:
        by_cat.setdefault(r.hull_type, []).append(r)
    assert {c.name for c in HULL_CATEGORIES} == set(by_cat)
    for cat in HULL_CATEGORIES:
        group = by_cat[cat.name]
        assert len(group) == cat.count
        for r in group:
            lo, hi = cat.diameter_mm
            assert lo / 1000.0 <= r.diameter_m <= hi / 1000.0
            assert r.blades in cat.blades
            assert cat.rpm[0] <= r.rpm <= cat.rpm[1]
            assert cat.power_kw[0] <= r.power_kw <= cat.power_kw[1]


def test_fleet_diameter_bounds(fleet):
    for r in fleet:
        assert 0.72 <= r.diameter_m <= 2.25


def test_fleet_deterministic(fleet):
    again = reference_designs(0)
    for a, b in zip(fleet, again):
        assert np.array_equal(flatten(a.design), flatten(b.design))
        assert (a.diameter_m, a.blades, a.rpm, a.power_kw) == (
            b.diameter_m, b.blades, b.rpm, b.power_kw,
        )


def test_fleet_seed_changes_designs(fleet):
    other = reference_designs(1)
    diffs = [
        not np.array_equal(flatten(a.design), flatten(b.design))
        for a, b in zip(fleet, other)
    ]
    assert all(diffs)


# --------------------------------------------------------------------- pca


def test_pca_recovers_exact_low_rank():
    rng = np.random.default_rng(5)
    basis = np.linalg.qr(rng.standard_normal((162, 3)))[0].T
    coeffs = rng.standard_normal((40, 3)) * np.array([5.0, 2.0, 0.7])
    x = coeffs @ basis + rng.standard_normal(162) * 0.0 + 3.0
    pca = fit_pca(x, variance_target=0.99)
    assert pca.k == 3
    recon = pca.inverse_transform(pca.transform(x))
    assert np.max(np.abs(recon - x)) < 1e-10


def test_pca_full_rank_roundtrip():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((25, 162))
    pca = fit_pca(x, variance_target=1.0)
    recon = pca.inverse_transform(pca.transform(x))
    assert np.max(np.abs(recon - x)) < 1e-10


def test_pca_centers_mean(fleet_pca, fleet):
    x = np.array([flatten(r.design) for r in fleet])
    z = fleet_pca.transform(x.mean(axis=0))
    assert np.max(np.abs(z)) < 1e-10


def test_pca_components_orthonormal(fleet_pca):
    g = fleet_pca.components @ fleet_pca.components.T
    assert np.max(np.abs(g - np.eye(fleet_pca.k))) < 1e-10


def test_pca_explained_ratios(fleet_pca):
    r = fleet_pca.explained_variance_ratio
    assert np.all(np.diff(r) <= 1e-15)
    assert r.sum() <= 1.0 + 1e-12
    assert r.sum() >= 0.99 - 1e-9


def test_pca_reconstruction_error_nonincreasing(fleet):
    x = np.array([flatten(r.design) for r in fleet])
    pca = fit_pca(x, variance_target=1.0)
    prev = np.inf
    for k in range(1, pca.k + 1):
        z = (x - pca.mean) @ pca.components[:k].T
        recon = z @ pca.components[:k] + pca.mean
        err = float(np.sum((recon - x) ** 2))
        assert err <= prev + 1e-9
        prev = err


def test_pca_rejects_degenerate_input():
    x = np.ones((10, 162))
    with pytest.raises(ValueError):
        fit_pca(x)
    with pytest.raises(ValueError):
        fit_pca(x[:1])


# ---------------------------------------------------------------- sampling


def test_sampling_spread_zero_returns_mean(fleet_pca, fleet):
    specs, n_rej = sample_designs(fleet_pca, 5, seed=2, spread=0.0)
    mean_design = np.array([flatten(r.design) for r in fleet]).mean(axis=0)
    for spec in specs:
        assert np.max(np.abs(flatten(spec.design) - mean_design)) < 1e-10
    assert n_rej == 0


def test_sampling_outputs_valid_specs(fleet_pca):
    specs, n_rej = sample_designs(fleet_pca, 64, seed=3)
    assert len(specs) == 64
    assert n_rej >= 0
    for spec in specs:
        assert is_physical(spec.design)
        assert 0.5 <= spec.diameter_m <= 2.5
        assert spec.blades in (4, 5)


def test_sampling_deterministic(fleet_pca):
    a, _ = sample_designs(fleet_pca, 16, seed=9)
    b, _ = sample_designs(fleet_pca, 16, seed=9)
    for sa, sb in zip(a, b):
        assert np.array_equal(flatten(sa.design), flatten(sb.design))
        assert (sa.diameter_m, sa.blades) == (sb.diameter_m, sb.blades)


def test_sampling_covers_both_blade_counts(fleet_pca):
    specs, _ = sample_designs(fleet_pca, 64, seed=3)
    assert {s.blades for s in specs} == {4, 5}


def test_sampled_bar_plausible(fleet_pca):
    specs, _ = sample_designs(fleet_pca, 64, seed=3)
    bars = [blade_area_ratio(s) for s in specs]
    assert 0.05 < min(bars) and max(bars) < 1.0


# ------------------------------------------------------------ standardizer


def test_standardizer_identities():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((200, 7)) * rng.uniform(0.1, 30.0, size=7) + 5.0
    std = Standardizer.fit(x)
    z = std.transform(x)
    assert np.max(np.abs(z.mean(axis=0))) < 1e-8
    assert np.max(np.abs(z.std(axis=0) - 1.0)) < 1e-6
    assert not std.flagged.any()
    back = std.inverse_transform(z)
    assert np.max(np.abs(back - x)) < 1e-9


def test_standardizer_flags_constant_columns():
    x = np.column_stack([np.full(50, 3.0), np.arange(50, dtype=float)])
    std = Standardizer.fit(x)
    assert std.flagged.tolist() == [True, False]
    assert std.std[0] == 1.0
    z = std.transform(x)
    assert np.allclose(z[:, 0], 0.0)


def test_standardizer_dict_roundtrip():
    x = np.random.default_rng(1).standard_normal((30, 4))
    std = Standardizer.fit(x)
    back = Standardizer.from_dict(std.to_dict())
    assert np.array_equal(back.mean, std.mean)
    assert np.array_equal(back.std, std.std)
    assert np.array_equal(back.flagged, std.flagged)


# ----------------------------------------------------------------- dataset


def test_dataset_files_and_manifest(small_dataset):
    out, manifest = small_dataset
    assert (out / "surrogate.csv").exists()
    assert (out / "generative.csv").exists()
    reloaded = load_manifest(out)
    assert reloaded == manifest
    surr_total = sum(manifest.surrogate_rows.values())
    gen_total = sum(manifest.generative_rows.values())
    assert surr_total > gen_total > 0
    # one generative row per design that produced any valid curve point
    assert gen_total <= manifest.n_designs


def test_dataset_split_fractions(small_dataset):
    _, manifest = small_dataset
    n = manifest.n_designs
    surr = manifest.surrogate_split_by_design
    gen = manifest.generative_split_by_design
    assert len(surr) == n and len(gen) == n
    counts = {s: surr.count(s) for s in ("train", "val", "test")}
    assert abs(counts["train"] - 0.70 * n) <= 1.0
    assert abs(counts["val"] - 0.15 * n) <= 1.0
    assert abs(counts["test"] - 0.15 * n) <= 1.0
    gcounts = {s: gen.count(s) for s in ("train", "val")}
    assert abs(gcounts["train"] - 0.80 * n) <= 1.0
    assert abs(gcounts["val"] - 0.20 * n) <= 1.0


def test_dataset_no_split_leakage(small_dataset):
    out, _ = small_dataset
    df = pd.read_csv(out / "surrogate.csv")
    design_key = [tuple(row) for row in df[DESIGN_COLUMNS].to_numpy()]
    splits_per_design = {}
    for key, split in zip(design_key, df["split"]):
        splits_per_design.setdefault(key, set()).add(split)
    assert all(len(s) == 1 for s in splits_per_design.values())


def test_dataset_rows_satisfy_identity(small_dataset):
    out, _ = small_dataset
    df = pd.read_csv(out / "generative.csv")
    c = df[CONDITION_COLUMNS].to_numpy()
    j, kt, kq, eta = c[:, 0], c[:, 1], c[:, 2], c[:, 3]
    assert (kq > 0.0).all()
    assert np.max(np.abs(eta - j * kt / (2.0 * np.pi * kq))) < 1e-8


def test_generative_rows_one_per_design(small_dataset):
    out, manifest = small_dataset
    df = pd.read_csv(out / "generative.csv")
    unique = np.unique(df[DESIGN_COLUMNS].to_numpy(), axis=0)
    assert len(unique) == len(df)
    assert len(df) == sum(manifest.generative_rows.values())


def test_generative_duty_points_in_working_range(small_dataset):
    out, _ = small_dataset
    df = pd.read_csv(out / "generative.csv")
    j = df["J"].to_numpy()
    # duty targets live on [0.40, 0.90]; the nearest valid curve point can
    # sit at most one 0.05 grid step outside
    assert j.min() >= 0.40 - 0.05 - 1e-9
    assert j.max() <= 0.90 + 0.05 + 1e-9


def test_duty_weights_peak_at_design_point():
    w = duty_weights()
    assert abs(w.sum() - 1.0) < 1e-12
    assert (w > 0.0).all()
    peak = int(np.argmax(w))
    assert DUTY_GRID[peak] == DUTY_PEAK
    # symmetric falloff around the peak within the grid
    assert w[peak] > w[0] and w[peak] > w[-1]


def test_dataset_loaders(small_dataset):
    out, manifest = small_dataset
    sd = load_surrogate_data(out)
    gd = load_generative_data(out)
    assert sd.x.shape == (sum(manifest.surrogate_rows.values()), 165)
    assert sd.y.shape[1] == 3
    assert gd.designs.shape[1] == 162
    assert gd.conditions.shape[1] == 6
    # standardizers behave on their own training rows
    xt, yt = sd.rows("train")
    zx = sd.x_std.transform(xt)
    ok = ~sd.x_std.flagged
    assert np.max(np.abs(zx.mean(axis=0)[ok])) < 1e-8
    assert np.max(np.abs(zx.std(axis=0)[ok] - 1.0)) < 1e-6
    zt = sd.y_std.transform(yt)
    assert np.max(np.abs(zt.mean(axis=0))) < 1e-8
    dz, cz = gd.rows("train")
    zd = gd.design_std.transform(dz)
    okd = ~gd.design_std.flagged
    assert np.max(np.abs(zd.mean(axis=0)[okd])) < 1e-8


def test_dataset_build_is_byte_deterministic(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    build_dataset(6, seed=4, out_dir=a)
    build_dataset(6, seed=4, out_dir=b)
    for name in ("surrogate.csv", "generative.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_manifest_json_is_sorted_and_plain(small_dataset):
    out, _ = small_dataset
    text = (out / "manifest.json").read_text()
    d = json.loads(text)
    assert json.dumps(d, sort_keys=True, indent=1) == text
