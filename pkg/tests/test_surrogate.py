"""Surrogate training, inference and metric tests on synthetic data.

Real-dataset quality thresholds live in the acceptance suite; here the
model is exercised on small constructed problems where the expected
behavior is known exactly.
"""

import numpy as np
import pytest

from propgen import surrogate
from propgen.datagen import Standardizer, SurrogateData
from propgen.geometry import PropellerSpec
from propgen.datagen import baseline_design  # noqa: F401  (re-exported path)
from propgen.surrogate import (
    SurrogateHyper,
    load_surrogate,
    predict,
    predict_batch,
    regression_metrics,
    save_surrogate,
    surrogate_input,
    train_surrogate,
)


def synthetic_dataset(n=800, seed=0):
    """Small dataset mimicking the real structure: inputs live near a
    low-dimensional manifold and targets are smooth functions of the latent
    coordinates."""
    rng = np.random.default_rng(seed)
    z = rng.uniform(-1.0, 1.0, size=(n, 4))
    lift = rng.standard_normal((4, surrogate.INPUT_DIM)) / 2.0
    x = z @ lift + 0.01 * rng.standard_normal((n, surrogate.INPUT_DIM))
    u, v, w = z[:, 0], z[:, 1], z[:, 2]
    y = np.column_stack([
        0.3 * u + 0.1 * v * w,
        0.05 * np.tanh(2.0 * v) + 0.02 * u,
        0.5 + 0.2 * u * v - 0.1 * w,
    ])
    split = np.array(["train"] * (n - 160) + ["val"] * 80 + ["test"] * 80)
    train = split == "train"
    return SurrogateData(
        x=x, y=y, split=split,
        x_std=Standardizer.fit(x[train]),
        y_std=Standardizer.fit(y[train]),
        manifest=None,
    )


@pytest.fixture(scope="module")
def tiny_model():
    ds = synthetic_dataset()
    return ds, train_surrogate(ds, SurrogateHyper(epochs=60, batch=64, seed=1))


def test_training_reduces_loss(tiny_model):
    _, model = tiny_model
    losses = model.report.train_losses
    assert all(l > 0.0 for l in losses)
    assert losses[-1] < 0.25 * losses[0]


def test_best_epoch_selection(tiny_model):
    _, model = tiny_model
    r = model.report
    assert r.best_epoch == int(np.argmin(r.val_losses))
    assert r.best_val_loss == min(r.val_losses)


def test_prediction_determinism(tiny_model):
    ds, model = tiny_model
    a = predict_batch(model, ds.x[:16])
    b = predict_batch(model, ds.x[:16])
    assert np.array_equal(a, b)


def test_prediction_batch_invariance(tiny_model):
    ds, model = tiny_model
    x = ds.x[:32]
    whole = predict_batch(model, x)
    rows = np.vstack([predict_batch(model, xi) for xi in x])
    assert np.max(np.abs(whole - rows)) < 1e-10
    perm = np.random.default_rng(3).permutation(len(x))
    assert np.max(np.abs(predict_batch(model, x[perm]) - whole[perm])) < 1e-10


def test_predict_spec_roundtrip(tiny_model):
    _, model = tiny_model
    spec = PropellerSpec(baseline_design(), 1.4, 5)
    kt, kq, eta = predict(model, spec, 0.7)
    x = surrogate_input(spec, 0.7)
    assert x.shape == (165,)
    assert x[162] == 1.4 and x[163] == 5.0 and x[164] == 0.7
    again = predict_batch(model, x)[0]
    assert (kt, kq, eta) == tuple(again)


def test_save_load_roundtrip(tmp_path, tiny_model):
    ds, model = tiny_model
    path = tmp_path / "model.bin"
    save_surrogate(path, model)
    back = load_surrogate(path)
    assert np.array_equal(predict_batch(back, ds.x[:8]), predict_batch(model, ds.x[:8]))
    assert back.report.best_epoch == model.report.best_epoch
    assert back.report.test_metrics == model.report.test_metrics
    assert back.report.train_losses == model.report.train_losses


def test_load_rejects_wrong_kind(tmp_path):
    from propgen import neural
    neural.save_arrays(tmp_path / "x.bin", {"kind": "other"}, {"a": np.zeros(3)})
    with pytest.raises(ValueError):
        load_surrogate(tmp_path / "x.bin")


def test_empty_split_rejected():
    ds = synthetic_dataset()
    ds.split = np.array(["train"] * len(ds.x))
    with pytest.raises(ValueError):
        train_surrogate(ds, SurrogateHyper(epochs=1))


def test_metrics_perfect_prediction():
    rng = np.random.default_rng(0)
    y = rng.standard_normal((50, 3))
    m = regression_metrics(y, y)
    for name in surrogate.TARGET_NAMES:
        assert m[name]["r2"] == pytest.approx(1.0, abs=1e-12)
        assert m[name]["rel_l2"] == 0.0
        assert m[name]["rmse"] == 0.0


def test_metrics_mean_predictor_r2_zero():
    rng = np.random.default_rng(1)
    y = rng.standard_normal((200, 3)) * np.array([0.2, 0.05, 0.3]) + 1.0
    pred = np.tile(y.mean(axis=0), (len(y), 1))
    m = regression_metrics(pred, y)
    for name in surrogate.TARGET_NAMES:
        assert m[name]["r2"] == pytest.approx(0.0, abs=1e-12)


def test_metrics_noise_variance_identity():
    # truth plus white noise of variance s^2: R^2 -> 1 - s^2 / Var(y)
    rng = np.random.default_rng(2)
    y = rng.standard_normal((20000, 3)) * np.array([1.0, 0.5, 2.0])
    sigma = np.array([0.3, 0.2, 0.5])
    pred = y + rng.standard_normal(y.shape) * sigma
    m = regression_metrics(pred, y)
    for col, name in enumerate(surrogate.TARGET_NAMES):
        expect = 1.0 - sigma[col] ** 2 / y[:, col].var()
        assert m[name]["r2"] == pytest.approx(expect, rel=0.05)


def test_metrics_zero_variance_target_rejected():
    y = np.ones((30, 3))
    with pytest.raises(ValueError):
        regression_metrics(y + 0.1, y)


def test_metrics_known_small_case():
    # two points, one column: worked by hand
    true = np.array([[0.0], [2.0]])
    pred = np.array([[0.5], [1.5]])
    m = regression_metrics(pred, true, names=("only",))["only"]
    # ss_res = 0.5, ss_tot = 2 -> r2 = 0.75; rel_l2 = sqrt(0.5)/2; rmse = 0.5
    assert m["r2"] == pytest.approx(0.75, rel=1e-12)
    assert m["rel_l2"] == pytest.approx(np.sqrt(0.5) / 2.0, rel=1e-12)
    assert m["rmse"] == pytest.approx(0.5, rel=1e-12)


def test_learns_synthetic_function(tiny_model):
    ds, model = tiny_model
    mets = model.report.test_metrics
    for name in surrogate.TARGET_NAMES:
        assert mets[name]["r2"] > 0.9
