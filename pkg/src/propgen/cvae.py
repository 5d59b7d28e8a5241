"""Conditional VAE over design vectors.

Encoder q(z | x, c) and decoder p(x | z, c) are small dense networks; the
loss is the beta-weighted conditional ELBO: reconstruction MSE plus the
closed-form Gaussian KL against a standard-normal prior. The condition is
the 5-vector [J, K_T, eta, D, B] (torque is excluded: it is recoverable
from the other terms), standardized with the generative dataset's
statistics. Sampling draws z from the prior and decodes under a requested
condition, reporting - not clipping - physically invalid outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from propgen import neural
from propgen.datagen import GenerativeData, Standardizer
from propgen.geometry import DESIGN_DIM, DesignVector, is_physical, unflatten
from propgen.neural import Mlp

COND_FIELDS = ("J", "KT", "eta", "D", "B")
COND_DIM = 5
LATENT_DIM = 16
LOGVAR_CLAMP = 10.0

ENCODER_HIDDEN = (256, 128)
DECODER_HIDDEN = (128, 256)

# positions of [J, KT, eta, D, B] inside the dataset's six condition
# columns [J, KT, KQ, eta, D, B]
_COND_PICK = np.array([0, 1, 3, 4, 5])


@dataclass
class CvaeHyper:
    beta: float = 0.07
    lr: float = 1e-4
    batch: int = 128
    epochs: int = 60
    seed: int = 0
    latent_dim: int = LATENT_DIM


@dataclass
class CvaeModel:
    encoder: Mlp
    decoder: Mlp
    beta: float
    latent_dim: int
    design_std: Standardizer
    cond_std: Standardizer
    report: dict = field(default_factory=dict)

    def parameters(self):
        return self.encoder.parameters() + self.decoder.parameters()


def condition_standardizer(full: Standardizer) -> Standardizer:
    """Reduce the six-column generative condition statistics to the
    five-field conditioning vector (K_Q dropped)."""
    return Standardizer(
        mean=full.mean[_COND_PICK].copy(),
        std=full.std[_COND_PICK].copy(),
        flagged=full.flagged[_COND_PICK].copy(),
    )


def conditioning_vector(j, kt, eta, d, b) -> np.ndarray:
    """Raw (unstandardized) conditioning vector in the pinned field order."""
    return np.array([j, kt, eta, d, b], dtype=np.float64)


def pick_conditions(conditions_6col: np.ndarray) -> np.ndarray:
    """Extract [J, KT, eta, D, B] rows from six-column dataset conditions."""
    return np.asarray(conditions_6col, dtype=np.float64)[:, _COND_PICK]


def _make_nets(rng, latent_dim: int):
    enc_sizes = [DESIGN_DIM + COND_DIM, *ENCODER_HIDDEN, 2 * latent_dim]
    dec_sizes = [latent_dim + COND_DIM, *DECODER_HIDDEN, DESIGN_DIM]
    encoder = Mlp.create(enc_sizes, ["relu"] * len(ENCODER_HIDDEN) + ["identity"], rng)
    decoder = Mlp.create(dec_sizes, ["relu"] * len(DECODER_HIDDEN) + ["identity"], rng)
    return encoder, decoder


def encode(model: CvaeModel, x_std: np.ndarray, c_std: np.ndarray):
    """Posterior parameters (mu, logvar) for standardized inputs."""
    out, _ = neural.forward(model.encoder, np.hstack([x_std, c_std]), train=False)
    mu = out[:, : model.latent_dim]
    logvar = np.clip(out[:, model.latent_dim :], -LOGVAR_CLAMP, LOGVAR_CLAMP)
    return mu, logvar


def decode(model: CvaeModel, z: np.ndarray, c_std: np.ndarray) -> np.ndarray:
    """Standardized design reconstructions for latents under a condition."""
    out, _ = neural.forward(model.decoder, np.hstack([z, c_std]), train=False)
    return out


def cvae_loss(model: CvaeModel, batch_x: np.ndarray, batch_c: np.ndarray, rng):
    """Loss, its two terms, and gradients for all parameters.

    loss = mean_i ||x_i - xhat_i||^2 + beta * mean_i KL_i with
    KL_i = 0.5 sum_d (exp(logvar) + mu^2 - 1 - logvar). One reparameterized
    sample per datum. Gradients are ordered [encoder params..., decoder
    params...] to match model.parameters().
    """
    x = np.atleast_2d(np.asarray(batch_x, dtype=np.float64))
    c = np.atleast_2d(np.asarray(batch_c, dtype=np.float64))
    if x.shape[1] != DESIGN_DIM or c.shape[1] != COND_DIM or x.shape[0] != c.shape[0]:
        raise ValueError("batch shapes disagree with (n,162) designs, (n,5) conditions")
    n = x.shape[0]
    d_z = model.latent_dim

    enc_out, enc_cache = neural.forward(
        model.encoder, np.hstack([x, c]), train=True
    )
    mu = enc_out[:, :d_z]
    logvar_raw = enc_out[:, d_z:]
    logvar = np.clip(logvar_raw, -LOGVAR_CLAMP, LOGVAR_CLAMP)
    clamp_open = (np.abs(logvar_raw) < LOGVAR_CLAMP).astype(np.float64)

    z, eps = neural.reparameterize(mu, logvar, rng)
    dec_out, dec_cache = neural.forward(
        model.decoder, np.hstack([z, c]), train=True
    )

    err = dec_out - x
    recon = float(np.mean(np.sum(err * err, axis=1)))
    kl = float(np.mean(0.5 * np.sum(np.exp(logvar) + mu * mu - 1.0 - logvar, axis=1)))
    loss = recon + model.beta * kl

    grad_dec_out = 2.0 * err / n
    dec_grads, dec_in_grad = neural.backward(model.decoder, dec_cache, grad_dec_out)
    grad_z = dec_in_grad[:, :d_z]

    sigma = np.exp(0.5 * logvar)
    grad_mu = grad_z + model.beta * mu / n
    grad_logvar = grad_z * (0.5 * sigma * eps)
    grad_logvar += model.beta * 0.5 * (np.exp(logvar) - 1.0) / n
    grad_logvar *= clamp_open  # clamped coordinates pass no gradient

    enc_grad_out = np.hstack([grad_mu, grad_logvar])
    enc_grads, _ = neural.backward(model.encoder, enc_cache, enc_grad_out)

    return loss, recon, kl, enc_grads + dec_grads


@dataclass
class GeneratedBatch:
    """Decoded designs for one condition, with validity bookkeeping."""

    designs: list
    physical: np.ndarray  # bool per design
    condition: np.ndarray  # raw 5-vector
    flat: np.ndarray  # (n, 162) raw design matrix

    def __len__(self):
        return len(self.designs)

    def __iter__(self):
        return iter(self.designs)

    @property
    def n_unphysical(self) -> int:
        return int((~self.physical).sum())


def generate(model: CvaeModel, condition, n_samples: int, seed) -> GeneratedBatch:
    """Decode n_samples prior draws under one raw condition vector."""
    c_raw = np.asarray(condition, dtype=np.float64).reshape(-1)
    if c_raw.shape != (COND_DIM,):
        raise ValueError(f"condition must have {COND_DIM} entries {COND_FIELDS}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_samples, model.latent_dim))
    c_std = np.tile(model.cond_std.transform(c_raw[None, :]), (n_samples, 1))
    flat = model.design_std.inverse_transform(decode(model, z, c_std))
    designs = [unflatten(row) for row in flat]
    physical = np.array([is_physical(d) for d in designs], dtype=bool)
    return GeneratedBatch(designs=designs, physical=physical, condition=c_raw, flat=flat)


def train_cvae(dataset: GenerativeData, hyper: CvaeHyper = None) -> CvaeModel:
    """Fit the conditional VAE on the generative training split.

    Weights are selected by the best validation loss, where the validation
    reconstruction uses the posterior mean (deterministic, so selection is
    not noised by sampling).
    """
    hyper = hyper or CvaeHyper()
    x_tr, c6_tr = dataset.rows("train")
    x_va, c6_va = dataset.rows("val")
    if len(x_tr) == 0 or len(x_va) == 0:
        raise ValueError("training and validation splits must be nonempty")

    cond_std = condition_standardizer(dataset.condition_std)
    xs = dataset.design_std.transform(x_tr)
    cs = cond_std.transform(pick_conditions(c6_tr))
    xv = dataset.design_std.transform(x_va)
    cv = cond_std.transform(pick_conditions(c6_va))

    rng = np.random.default_rng(hyper.seed)
    encoder, decoder = _make_nets(rng, hyper.latent_dim)
    model = CvaeModel(
        encoder=encoder,
        decoder=decoder,
        beta=hyper.beta,
        latent_dim=hyper.latent_dim,
        design_std=dataset.design_std,
        cond_std=cond_std,
    )
    opt = neural.AdamState(lr=hyper.lr)
    report = {
        "train_losses": [],
        "val_losses": [],
        "recon_terms": [],
        "kl_terms": [],
        "best_epoch": -1,
        "best_val_loss": float("inf"),
        "hyper": vars(hyper).copy(),
    }
    model.report = report

    best_params = [p.copy() for p in model.parameters()]
    for epoch in range(hyper.epochs):
        tot = tot_r = tot_k = 0.0
        count = 0
        for idx in neural.minibatch_indices(len(xs), hyper.batch, rng):
            loss, recon, kl, grads = cvae_loss(model, xs[idx], cs[idx], rng)
            neural.adam_step(opt, model.parameters(), grads)
            tot += loss * len(idx)
            tot_r += recon * len(idx)
            tot_k += kl * len(idx)
            count += len(idx)
        report["train_losses"].append(tot / count)
        report["recon_terms"].append(tot_r / count)
        report["kl_terms"].append(tot_k / count)

        mu, logvar = encode(model, xv, cv)
        recon_v = decode(model, mu, cv)
        val_recon = float(np.mean(np.sum((recon_v - xv) ** 2, axis=1)))
        val_kl = float(
            np.mean(0.5 * np.sum(np.exp(logvar) + mu * mu - 1.0 - logvar, axis=1))
        )
        val_loss = val_recon + hyper.beta * val_kl
        report["val_losses"].append(val_loss)
        if val_loss < report["best_val_loss"]:
            report["best_val_loss"] = val_loss
            report["best_epoch"] = epoch
            best_params = [p.copy() for p in model.parameters()]

    for p, best in zip(model.parameters(), best_params):
        p[...] = best
    return model


DEFAULT_SWEEP_BETAS = (0.02, 0.05, 0.07, 0.1, 0.5)


@dataclass
class SweepProtocol:
    """Everything a beta sweep needs beyond the beta values themselves.

    The conditions are raw [J, KT, eta, D, B] rows (typically drawn from
    the held-out split so targets are achievable); every trained model
    generates n_samples designs per condition and is scored against the
    same surrogate.
    """

    dataset: GenerativeData
    surrogate: object  # SurrogateModel
    conditions: np.ndarray
    n_samples: int = 20
    lr: float = 1e-4
    epochs: int = 60
    batch: int = 128
    seed: int = 0


@dataclass
class SweepResult:
    rows: list  # one summary dict per beta, in sweep order
    models: dict  # beta -> trained CvaeModel


def evaluate_generated(model, conditions, n_samples, surrogate, seed):
    """Generate per condition and score condition matching + diversity.

    Returns (row, flats) where row holds pooled K_T / eta percent and
    relative-L2 errors, the mean within-condition spread coefficient, and
    the invalid-design count; flats is the per-condition list of raw
    design matrices for any further analysis.
    """
    from propgen import metrics

    flats, cond_rows, spreads = [], [], []
    n_unphysical = 0
    for ci, cond in enumerate(np.atleast_2d(conditions)):
        batch = generate(
            model, cond, n_samples, seed=np.random.SeedSequence([seed, ci])
        )
        flats.append(batch.flat)
        cond_rows.append(np.tile(cond, (n_samples, 1)))
        spreads.append(metrics.spread_coefficient(batch.flat, model.design_std))
        n_unphysical += batch.n_unphysical
    errs = metrics.condition_match_errors(
        np.vstack(flats), np.vstack(cond_rows), metrics.surrogate_evaluator(surrogate)
    )
    row = {
        "kt_err_pct": errs["err_pct"]["KT"],
        "eta_err_pct": errs["err_pct"]["eta"],
        "kt_rel_l2": errs["rel_l2"]["KT"],
        "eta_rel_l2": errs["rel_l2"]["eta"],
        "spread": float(np.mean(spreads)),
        "n_unphysical": int(n_unphysical),
        "n_samples": int(sum(len(f) for f in flats)),
    }
    return row, flats


def sweep_beta(betas, fixed_protocol: SweepProtocol) -> SweepResult:
    """Train one model per beta and tabulate condition errors and spread.

    All models share the training seed, hyperparameters, and generation
    seeds, so rows differ only through beta.
    """
    p = fixed_protocol
    rows, models = [], {}
    for beta in betas:
        model = train_cvae(
            p.dataset,
            CvaeHyper(beta=beta, lr=p.lr, batch=p.batch, epochs=p.epochs, seed=p.seed),
        )
        row, _ = evaluate_generated(
            model, p.conditions, p.n_samples, p.surrogate, p.seed
        )
        rows.append({"beta": float(beta), **row})
        models[float(beta)] = model
    return SweepResult(rows=rows, models=models)


def save_cvae(path, model: CvaeModel) -> None:
    arrays = {}
    enc_cfg = neural.mlp_to_arrays("enc", model.encoder, arrays)
    dec_cfg = neural.mlp_to_arrays("dec", model.decoder, arrays)
    for prefix, std in (("x", model.design_std), ("c", model.cond_std)):
        arrays[f"{prefix}_mean"] = std.mean
        arrays[f"{prefix}_scale"] = std.std
        arrays[f"{prefix}_flagged"] = std.flagged.astype(np.float64)
    header = {
        "kind": "cvae",
        "beta": model.beta,
        "latent_dim": model.latent_dim,
        "encoder": enc_cfg,
        "decoder": dec_cfg,
        "report": model.report,
    }
    neural.save_arrays(path, header, arrays)


def load_cvae(path) -> CvaeModel:
    header, arrays = neural.load_arrays(path)
    if header.get("kind") != "cvae":
        raise ValueError(f"not a cvae model file: kind={header.get('kind')!r}")

    def std(prefix):
        return Standardizer(
            mean=arrays[f"{prefix}_mean"],
            std=arrays[f"{prefix}_scale"],
            flagged=arrays[f"{prefix}_flagged"] > 0.5,
        )

    return CvaeModel(
        encoder=neural.mlp_from_arrays("enc", header["encoder"], arrays),
        decoder=neural.mlp_from_arrays("dec", header["decoder"], arrays),
        beta=header["beta"],
        latent_dim=header["latent_dim"],
        design_std=std("x"),
        cond_std=std("c"),
        report=header["report"],
    )
