"""Forward performance surrogate.

A small dense network mapping the 165-dim input [design_162, D, B, J] to
(K_T, K_Q, eta). Inputs and targets are standardized with the statistics
fitted on the dataset's training split; weights are selected by the best
validation epoch; quality is reported as per-target R^2, relative L2 error
and RMSE in physical units.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from propgen import neural
from propgen.datagen import Standardizer, SurrogateData
from propgen.geometry import PropellerSpec, flatten
from propgen.neural import AdamState, Mlp

INPUT_DIM = 165
TARGET_NAMES = ("KT", "KQ", "eta")

HIDDEN_SIZES = (256, 256, 128)
DROPOUT = 0.1


@dataclass
class SurrogateHyper:
    lr: float = 1e-3
    batch: int = 256
    epochs: int = 80
    seed: int = 0


@dataclass
class TrainingReport:
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    test_metrics: dict = field(default_factory=dict)
    hyper: dict = field(default_factory=dict)


@dataclass
class SurrogateModel:
    net: Mlp
    x_std: Standardizer
    y_std: Standardizer
    report: TrainingReport


def _make_net(rng) -> Mlp:
    sizes = [INPUT_DIM, *HIDDEN_SIZES, len(TARGET_NAMES)]
    activations = ["relu"] * len(HIDDEN_SIZES) + ["identity"]
    dropout = [DROPOUT] * len(HIDDEN_SIZES) + [0.0]
    return Mlp.create(sizes, activations, rng, dropout=dropout)


def train_surrogate(dataset: SurrogateData, hyper: SurrogateHyper = None) -> SurrogateModel:
    """Fit the surrogate on the dataset's training split.

    Minibatch Adam on standardized inputs/targets; the weights kept are
    those of the epoch with the lowest validation MSE (summed over the
    three standardized targets). The returned report carries the loss
    history and the physical-unit test metrics.
    """
    hyper = hyper or SurrogateHyper()
    x_tr, y_tr = dataset.rows("train")
    x_va, y_va = dataset.rows("val")
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ValueError("training and validation splits must be nonempty")

    x_std, y_std = dataset.x_std, dataset.y_std
    xs, ys = x_std.transform(x_tr), y_std.transform(y_tr)
    xv, yv = x_std.transform(x_va), y_std.transform(y_va)

    rng = np.random.default_rng(hyper.seed)
    net = _make_net(rng)
    opt = AdamState(lr=hyper.lr)
    report = TrainingReport(hyper=vars(hyper).copy())

    best_params = [p.copy() for p in net.parameters()]
    for epoch in range(hyper.epochs):
        total = 0.0
        count = 0
        for idx in neural.minibatch_indices(len(xs), hyper.batch, rng):
            loss, grads = neural.mse_loss_and_grad(
                net, xs[idx], ys[idx], rng=rng, train=True
            )
            neural.adam_step(opt, net.parameters(), grads)
            total += loss * len(idx)
            count += len(idx)
        report.train_losses.append(total / count)

        pred_v, _ = neural.forward(net, xv, train=False)
        val_loss = float(np.mean(np.sum((pred_v - yv) ** 2, axis=1)))
        report.val_losses.append(val_loss)
        if val_loss < report.best_val_loss:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            best_params = [p.copy() for p in net.parameters()]

    for p, best in zip(net.parameters(), best_params):
        p[...] = best

    model = SurrogateModel(net=net, x_std=x_std, y_std=y_std, report=report)
    x_te, y_te = dataset.rows("test")
    if len(x_te):
        report.test_metrics = test_metrics(model, (x_te, y_te))
    return model


def predict_batch(model: SurrogateModel, x: np.ndarray) -> np.ndarray:
    """Physical-unit predictions for a batch of raw 165-dim inputs."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != INPUT_DIM:
        raise ValueError(f"expected {INPUT_DIM} input columns, got {x.shape[1]}")
    z, _ = neural.forward(model.net, model.x_std.transform(x), train=False)
    return model.y_std.inverse_transform(z)


def surrogate_input(spec: PropellerSpec, j: float) -> np.ndarray:
    return np.concatenate(
        [flatten(spec.design), [spec.diameter_m, float(spec.blades), float(j)]]
    )


def predict(model: SurrogateModel, spec: PropellerSpec, j: float):
    """(K_T, K_Q, eta) for one design at one advance ratio."""
    out = predict_batch(model, surrogate_input(spec, j))[0]
    return float(out[0]), float(out[1]), float(out[2])


def regression_metrics(pred: np.ndarray, true: np.ndarray, names=TARGET_NAMES) -> dict:
    """Column-wise R^2, relative L2 and RMSE for prediction arrays."""
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    true = np.atleast_2d(np.asarray(true, dtype=np.float64))
    if pred.shape != true.shape:
        raise ValueError("prediction and target shapes disagree")
    if len(true) == 0:
        raise ValueError("empty evaluation split")
    out = {}
    for col, name in enumerate(names):
        t = true[:, col]
        p = pred[:, col]
        ss_tot = float(np.sum((t - t.mean()) ** 2))
        if ss_tot <= 0.0:
            raise ValueError(f"target column {name} has zero variance")
        ss_res = float(np.sum((t - p) ** 2))
        out[name] = {
            "r2": 1.0 - ss_res / ss_tot,
            "rel_l2": float(np.linalg.norm(p - t) / np.linalg.norm(t)),
            "rmse": float(np.sqrt(np.mean((p - t) ** 2))),
        }
    return out


def test_metrics(model: SurrogateModel, split) -> dict:
    """Per-target R^2, relative L2 and RMSE in physical units.

    split is an (inputs, targets) pair, e.g. dataset.rows("test").
    """
    x, y = split
    y = np.asarray(y, dtype=np.float64)
    if len(y) == 0:
        raise ValueError("empty evaluation split")
    return regression_metrics(predict_batch(model, x), y)


def save_surrogate(path, model: SurrogateModel) -> None:
    arrays = {}
    net_cfg = neural.mlp_to_arrays("net", model.net, arrays)
    for prefix, std in (("x", model.x_std), ("y", model.y_std)):
        arrays[f"{prefix}_mean"] = std.mean
        arrays[f"{prefix}_scale"] = std.std
        arrays[f"{prefix}_flagged"] = std.flagged.astype(np.float64)
    header = {
        "kind": "surrogate",
        "net": net_cfg,
        "report": {
            "train_losses": model.report.train_losses,
            "val_losses": model.report.val_losses,
            "best_epoch": model.report.best_epoch,
            "best_val_loss": model.report.best_val_loss,
            "test_metrics": model.report.test_metrics,
            "hyper": model.report.hyper,
        },
    }
    neural.save_arrays(path, header, arrays)


def _std_from_arrays(arrays, prefix) -> Standardizer:
    return Standardizer(
        mean=arrays[f"{prefix}_mean"],
        std=arrays[f"{prefix}_scale"],
        flagged=arrays[f"{prefix}_flagged"] > 0.5,
    )


def load_surrogate(path) -> SurrogateModel:
    header, arrays = neural.load_arrays(path)
    if header.get("kind") != "surrogate":
        raise ValueError(f"not a surrogate model file: kind={header.get('kind')!r}")
    rep = header["report"]
    report = TrainingReport(
        train_losses=rep["train_losses"],
        val_losses=rep["val_losses"],
        best_epoch=rep["best_epoch"],
        best_val_loss=rep["best_val_loss"],
        test_metrics=rep["test_metrics"],
        hyper=rep["hyper"],
    )
    return SurrogateModel(
        net=neural.mlp_from_arrays("net", header["net"], arrays),
        x_std=_std_from_arrays(arrays, "x"),
        y_std=_std_from_arrays(arrays, "y"),
        report=report,
    )
