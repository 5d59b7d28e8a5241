"""Latent diffusion over compressed design vectors.

A small unconditional VAE maps standardized 162-dim designs to a 64-dim
latent space and is frozen after training. A conditional denoiser is then
trained on standardized latent codes with either noise prediction
(epsilon) or velocity prediction, under a linear beta schedule, and
sampled with the ancestral DDPM loop. A design-space variant (diffusing
directly on the 162 standardized design coordinates, no VAE) exists
behind a flag to reproduce the baseline comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from propgen import neural
from propgen.cvae import GeneratedBatch, condition_standardizer, pick_conditions
from propgen.datagen import GenerativeData, Standardizer
from propgen.geometry import DESIGN_DIM, is_physical, unflatten
from propgen.neural import Mlp

COND_DIM = 5
LATENT_DIM = 64
TIME_EMBED_DIM = 32
DEFAULT_T = 200
BETA_START = 1e-4
BETA_END = 0.02
VAE_BETA_DEFAULT = 0.0005

VAE_ENCODER_HIDDEN = (256, 128)
VAE_DECODER_HIDDEN = (128, 256)
DENOISER_HIDDEN = (256, 256)

PREDICTION_MODES = ("epsilon", "velocity")


# ---------------------------------------------------------------------------
# stage 1: unconditional VAE


@dataclass
class LatentVae:
    encoder: Mlp
    decoder: Mlp
    beta_vae: float
    latent_dim: int
    design_std: Standardizer
    report: dict = field(default_factory=dict)

    def parameters(self):
        return self.encoder.parameters() + self.decoder.parameters()


@dataclass
class VaeHyper:
    beta_vae: float = VAE_BETA_DEFAULT
    lr: float = 1e-3
    batch: int = 64
    epochs: int = 200
    seed: int = 0
    latent_dim: int = LATENT_DIM


def encode_mean(vae: LatentVae, x_std: np.ndarray) -> np.ndarray:
    """Posterior mean latent for standardized designs."""
    out, _ = neural.forward(vae.encoder, np.atleast_2d(x_std), train=False)
    return out[:, : vae.latent_dim]


def decode_latent(vae: LatentVae, z: np.ndarray) -> np.ndarray:
    out, _ = neural.forward(vae.decoder, np.atleast_2d(z), train=False)
    return out


def vae_loss(vae: LatentVae, batch_x: np.ndarray, rng):
    """Unconditional analogue of the conditional VAE loss.

    Same conventions: reconstruction is the batch mean of the summed
    squared error, KL is closed form against N(0, I), one sample per
    datum, logvar clamped to +-10.
    """
    x = np.atleast_2d(np.asarray(batch_x, dtype=np.float64))
    if x.shape[1] != vae.encoder.sizes[0]:
        raise ValueError(f"expected {vae.encoder.sizes[0]} design columns")
    n = x.shape[0]
    d_z = vae.latent_dim

    enc_out, enc_cache = neural.forward(vae.encoder, x, train=True)
    mu = enc_out[:, :d_z]
    logvar_raw = enc_out[:, d_z:]
    logvar = np.clip(logvar_raw, -10.0, 10.0)
    clamp_open = (np.abs(logvar_raw) < 10.0).astype(np.float64)

    z, eps = neural.reparameterize(mu, logvar, rng)
    dec_out, dec_cache = neural.forward(vae.decoder, z, train=True)

    err = dec_out - x
    recon = float(np.mean(np.sum(err * err, axis=1)))
    kl = float(np.mean(0.5 * np.sum(np.exp(logvar) + mu * mu - 1.0 - logvar, axis=1)))
    loss = recon + vae.beta_vae * kl

    dec_grads, grad_z = neural.backward(vae.decoder, dec_cache, 2.0 * err / n)
    sigma = np.exp(0.5 * logvar)
    grad_mu = grad_z + vae.beta_vae * mu / n
    grad_logvar = grad_z * (0.5 * sigma * eps)
    grad_logvar += vae.beta_vae * 0.5 * (np.exp(logvar) - 1.0) / n
    grad_logvar *= clamp_open
    enc_grads, _ = neural.backward(
        vae.encoder, enc_cache, np.hstack([grad_mu, grad_logvar])
    )
    return loss, recon, kl, enc_grads + dec_grads


def train_latent_vae(dataset: GenerativeData, hyper: VaeHyper = None) -> LatentVae:
    """Fit the design autoencoder on deduplicated training designs.

    The generative table carries one row per design, so deduplication is
    normally a no-op; it stays as a guard so the autoencoder never weights
    a geometry by how often it appears. The returned model is frozen by
    convention: nothing in this module mutates it afterwards.
    """
    hyper = hyper or VaeHyper()
    x_tr = np.unique(dataset.rows("train")[0], axis=0)
    x_va = np.unique(dataset.rows("val")[0], axis=0)
    if len(x_tr) < 2 or len(x_va) < 1:
        raise ValueError("need nonempty train and val design sets")
    xs = dataset.design_std.transform(x_tr)
    xv = dataset.design_std.transform(x_va)

    rng = np.random.default_rng(hyper.seed)
    d_in = xs.shape[1]
    encoder = Mlp.create(
        [d_in, *VAE_ENCODER_HIDDEN, 2 * hyper.latent_dim],
        ["relu"] * len(VAE_ENCODER_HIDDEN) + ["identity"],
        rng,
    )
    decoder = Mlp.create(
        [hyper.latent_dim, *VAE_DECODER_HIDDEN, d_in],
        ["relu"] * len(VAE_DECODER_HIDDEN) + ["identity"],
        rng,
    )
    vae = LatentVae(
        encoder=encoder,
        decoder=decoder,
        beta_vae=hyper.beta_vae,
        latent_dim=hyper.latent_dim,
        design_std=dataset.design_std,
    )
    opt = neural.AdamState(lr=hyper.lr)
    report = {
        "train_losses": [],
        "val_recon": [],
        "val_kl": [],
        "best_epoch": -1,
        "best_val_recon": float("inf"),
        "hyper": vars(hyper).copy(),
        "n_train_designs": int(len(xs)),
    }
    vae.report = report

    best = [p.copy() for p in vae.parameters()]
    for epoch in range(hyper.epochs):
        tot, count = 0.0, 0
        for idx in neural.minibatch_indices(len(xs), hyper.batch, rng):
            loss, _, _, grads = vae_loss(vae, xs[idx], rng)
            neural.adam_step(opt, vae.parameters(), grads)
            tot += loss * len(idx)
            count += len(idx)
        report["train_losses"].append(tot / count)

        mu = encode_mean(vae, xv)
        out, _ = neural.forward(vae.encoder, xv, train=False)
        logvar = np.clip(out[:, hyper.latent_dim :], -10.0, 10.0)
        recon = decode_latent(vae, mu)
        val_recon = float(np.mean(np.sum((recon - xv) ** 2, axis=1)))
        val_kl = float(
            np.mean(0.5 * np.sum(np.exp(logvar) + mu * mu - 1.0 - logvar, axis=1))
        )
        report["val_recon"].append(val_recon)
        report["val_kl"].append(val_kl)
        if val_recon < report["best_val_recon"]:
            report["best_val_recon"] = val_recon
            report["best_epoch"] = epoch
            best = [p.copy() for p in vae.parameters()]

    for p, b in zip(vae.parameters(), best):
        p[...] = b
    return vae


# ---------------------------------------------------------------------------
# stage 2: diffusion in the (standardized) latent space


@dataclass
class NoiseSchedule:
    """Linear beta schedule with cached cumulative products.

    Arrays are indexed by t - 1 for t in [1, T].
    """

    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @classmethod
    def linear(cls, T: int, beta_start: float = BETA_START, beta_end: float = BETA_END):
        if T < 1:
            raise ValueError("need at least one timestep")
        betas = np.linspace(beta_start, beta_end, T)
        alphas = 1.0 - betas
        return cls(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))

    @property
    def T(self) -> int:
        return len(self.betas)

    def check(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"timestep out of range [1, {self.T}]")
        return t


@dataclass
class DiffusionModel:
    denoiser: Mlp
    schedule: NoiseSchedule
    prediction_mode: str
    latent_dim: int
    latent_std: Standardizer  # statistics of the encoded training latents
    cond_std: Standardizer
    design_space: bool = False  # True: diffuse on designs directly, no VAE
    report: dict = field(default_factory=dict)


@dataclass
class DiffusionHyper:
    mode: str = "velocity"
    T: int = DEFAULT_T
    lr: float = 1e-3
    batch: int = 128
    epochs: int = 40
    seed: int = 0


def timestep_embedding(t, dim: int = TIME_EMBED_DIM) -> np.ndarray:
    """Sinusoidal embedding of integer timesteps, shape (n, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def noising(schedule: NoiseSchedule, z0: np.ndarray, t, epsilon: np.ndarray):
    """Forward process draw z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps."""
    t = schedule.check(t)
    abar = schedule.alpha_bars[np.asarray(t) - 1]
    abar = np.asarray(abar, dtype=np.float64).reshape(-1, 1) if np.ndim(z0) == 2 else abar
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * epsilon


def velocity_target(schedule: NoiseSchedule, z0, t, epsilon):
    """v = sqrt(abar_t) eps - sqrt(1 - abar_t) z0."""
    t = schedule.check(t)
    abar = schedule.alpha_bars[np.asarray(t) - 1]
    abar = np.asarray(abar, dtype=np.float64).reshape(-1, 1) if np.ndim(z0) == 2 else abar
    return np.sqrt(abar) * epsilon - np.sqrt(1.0 - abar) * z0


def z0_from_prediction(schedule: NoiseSchedule, z_t, t, pred, mode: str):
    """Clean-latent estimate from either prediction head."""
    t = schedule.check(t)
    abar = schedule.alpha_bars[np.asarray(t) - 1]
    abar = np.asarray(abar, dtype=np.float64).reshape(-1, 1) if np.ndim(z_t) == 2 else abar
    if mode == "epsilon":
        return (z_t - np.sqrt(1.0 - abar) * pred) / np.sqrt(abar)
    if mode == "velocity":
        return np.sqrt(abar) * z_t - np.sqrt(1.0 - abar) * pred
    raise ValueError(f"unknown prediction mode {mode!r}")


def denoiser_input(z_t: np.ndarray, c_std: np.ndarray, t) -> np.ndarray:
    emb = timestep_embedding(t)
    if emb.shape[0] == 1 and z_t.shape[0] > 1:
        emb = np.tile(emb, (z_t.shape[0], 1))
    return np.hstack([z_t, c_std, emb])


def diffusion_loss(
    model: DiffusionModel, z0: np.ndarray, c_std: np.ndarray, rng
):
    """Per-element MSE between the prediction and its target, plus grads.

    Timesteps are drawn uniformly from [1, T] and one noise draw is made
    per row. The per-element normalization makes the initialization loss
    of the epsilon mode sit near 1.
    """
    z0 = np.atleast_2d(z0)
    c_std = np.atleast_2d(c_std)
    if z0.shape[0] != c_std.shape[0]:
        raise ValueError("latents and conditions must align")
    n, d = z0.shape
    t = rng.integers(1, model.schedule.T + 1, size=n)
    eps = rng.standard_normal(z0.shape)
    z_t = noising(model.schedule, z0, t, eps)
    if model.prediction_mode == "epsilon":
        target = eps
    else:
        target = velocity_target(model.schedule, z0, t, eps)

    pred, cache = neural.forward(model.denoiser, denoiser_input(z_t, c_std, t), train=True)
    err = pred - target
    loss = float(np.mean(err * err))
    grads, _ = neural.backward(model.denoiser, cache, 2.0 * err / err.size)
    return loss, grads


def train_diffusion(
    vae: LatentVae, dataset: GenerativeData, hyper: DiffusionHyper = None
) -> DiffusionModel:
    """Train a conditional denoiser on the frozen VAE's latent codes."""
    hyper = hyper or DiffusionHyper()
    if hyper.mode not in PREDICTION_MODES:
        raise ValueError(f"mode must be one of {PREDICTION_MODES}")

    x_tr, c6_tr = dataset.rows("train")
    cond_std = condition_standardizer(dataset.condition_std)
    cs = cond_std.transform(pick_conditions(c6_tr))
    xs = dataset.design_std.transform(x_tr)

    if vae is None:  # design-space ablation: diffuse the designs themselves
        z_raw = xs
        design_space = True
        latent_dim = xs.shape[1]
    else:
        z_raw = encode_mean(vae, xs)
        design_space = False
        latent_dim = vae.latent_dim
    latent_std = Standardizer.fit(z_raw)
    zs = latent_std.transform(z_raw)

    rng = np.random.default_rng(hyper.seed)
    denoiser = Mlp.create(
        [latent_dim + COND_DIM + TIME_EMBED_DIM, *DENOISER_HIDDEN, latent_dim],
        ["relu"] * len(DENOISER_HIDDEN) + ["identity"],
        rng,
    )
    model = DiffusionModel(
        denoiser=denoiser,
        schedule=NoiseSchedule.linear(hyper.T),
        prediction_mode=hyper.mode,
        latent_dim=latent_dim,
        latent_std=latent_std,
        cond_std=cond_std,
        design_space=design_space,
        report={"train_losses": [], "hyper": vars(hyper).copy()},
    )
    opt = neural.AdamState(lr=hyper.lr)
    for _ in range(hyper.epochs):
        tot, count = 0.0, 0
        for idx in neural.minibatch_indices(len(zs), hyper.batch, rng):
            loss, grads = diffusion_loss(model, zs[idx], cs[idx], rng)
            neural.adam_step(opt, denoiser.parameters(), grads)
            tot += loss * len(idx)
            count += len(idx)
        model.report["train_losses"].append(tot / count)
    return model


def _reverse_loop(model: DiffusionModel, c_std: np.ndarray, n: int, rng) -> np.ndarray:
    """Ancestral DDPM loop T -> 1 returning the final clean latents.

    Each step forms the posterior mean from the mode-appropriate clean
    estimate with the "small" DDPM variance beta_tilde; the final step
    adds no noise.
    """
    sched = model.schedule
    z = rng.standard_normal((n, model.latent_dim))
    for t in range(sched.T, 0, -1):
        tt = np.full(n, t)
        pred, _ = neural.forward(
            model.denoiser, denoiser_input(z, c_std, tt), train=False
        )
        z0_hat = z0_from_prediction(sched, z, tt, pred, model.prediction_mode)
        if t == 1:
            return z0_hat  # posterior mean at t=1 is the clean estimate
        abar_t = sched.alpha_bars[t - 1]
        abar_prev = sched.alpha_bars[t - 2]
        beta_t = sched.betas[t - 1]
        alpha_t = sched.alphas[t - 1]
        mean = (
            np.sqrt(abar_prev) * beta_t / (1.0 - abar_t) * z0_hat
            + np.sqrt(alpha_t) * (1.0 - abar_prev) / (1.0 - abar_t) * z
        )
        var = (1.0 - abar_prev) / (1.0 - abar_t) * beta_t
        z = mean + np.sqrt(var) * rng.standard_normal(z.shape)
    return z


def _as_batch(flat: np.ndarray, c_raw: np.ndarray) -> GeneratedBatch:
    designs = [unflatten(row) for row in flat]
    physical = np.array([is_physical(d) for d in designs], dtype=bool)
    return GeneratedBatch(designs=designs, physical=physical, condition=c_raw, flat=flat)


def _check_condition(condition) -> np.ndarray:
    c_raw = np.asarray(condition, dtype=np.float64).reshape(-1)
    if c_raw.shape != (COND_DIM,):
        raise ValueError(f"condition must have {COND_DIM} entries")
    return c_raw


def sample(
    model: DiffusionModel, vae: LatentVae, condition, n_samples: int, seed
) -> GeneratedBatch:
    """Sample designs under one raw condition via the frozen VAE decoder."""
    if model.design_space:
        raise ValueError("design-space model: use sample_design_space()")
    c_raw = _check_condition(condition)
    rng = np.random.default_rng(seed)
    c_std = np.tile(model.cond_std.transform(c_raw[None, :]), (n_samples, 1))
    z = _reverse_loop(model, c_std, n_samples, rng)
    flat_std = decode_latent(vae, model.latent_std.inverse_transform(z))
    return _as_batch(vae.design_std.inverse_transform(flat_std), c_raw)


def sample_design_space(
    model: DiffusionModel, design_std: Standardizer, condition, n_samples: int, seed
) -> GeneratedBatch:
    """Sampling for the no-VAE ablation: the "latent" is the design itself.

    latent_std was fit on standardized designs, so inverting it recovers
    standardized designs, and the dataset design standardizer finishes the
    trip to raw units.
    """
    if not model.design_space:
        raise ValueError("model was trained in latent space; use sample()")
    c_raw = _check_condition(condition)
    rng = np.random.default_rng(seed)
    c_std = np.tile(model.cond_std.transform(c_raw[None, :]), (n_samples, 1))
    z = _reverse_loop(model, c_std, n_samples, rng)
    flat = design_std.inverse_transform(model.latent_std.inverse_transform(z))
    return _as_batch(flat, c_raw)


# ---------------------------------------------------------------------------
# persistence


def save_latent_vae(path, vae: LatentVae) -> None:
    arrays = {}
    enc_cfg = neural.mlp_to_arrays("enc", vae.encoder, arrays)
    dec_cfg = neural.mlp_to_arrays("dec", vae.decoder, arrays)
    arrays["x_mean"] = vae.design_std.mean
    arrays["x_scale"] = vae.design_std.std
    arrays["x_flagged"] = vae.design_std.flagged.astype(np.float64)
    neural.save_arrays(
        path,
        {
            "kind": "latent-vae",
            "beta_vae": vae.beta_vae,
            "latent_dim": vae.latent_dim,
            "encoder": enc_cfg,
            "decoder": dec_cfg,
            "report": vae.report,
        },
        arrays,
    )


def load_latent_vae(path) -> LatentVae:
    header, arrays = neural.load_arrays(path)
    if header.get("kind") != "latent-vae":
        raise ValueError(f"not a latent-vae file: kind={header.get('kind')!r}")
    return LatentVae(
        encoder=neural.mlp_from_arrays("enc", header["encoder"], arrays),
        decoder=neural.mlp_from_arrays("dec", header["decoder"], arrays),
        beta_vae=header["beta_vae"],
        latent_dim=header["latent_dim"],
        design_std=Standardizer(
            mean=arrays["x_mean"],
            std=arrays["x_scale"],
            flagged=arrays["x_flagged"] > 0.5,
        ),
        report=header["report"],
    )


def save_diffusion(path, model: DiffusionModel) -> None:
    arrays = {}
    cfg = neural.mlp_to_arrays("den", model.denoiser, arrays)
    for prefix, std in (("z", model.latent_std), ("c", model.cond_std)):
        arrays[f"{prefix}_mean"] = std.mean
        arrays[f"{prefix}_scale"] = std.std
        arrays[f"{prefix}_flagged"] = std.flagged.astype(np.float64)
    neural.save_arrays(
        path,
        {
            "kind": "diffusion",
            "prediction_mode": model.prediction_mode,
            "latent_dim": model.latent_dim,
            "T": model.schedule.T,
            "beta_start": float(model.schedule.betas[0]),
            "beta_end": float(model.schedule.betas[-1]),
            "design_space": model.design_space,
            "denoiser": cfg,
            "report": model.report,
        },
        arrays,
    )


def load_diffusion(path) -> DiffusionModel:
    header, arrays = neural.load_arrays(path)
    if header.get("kind") != "diffusion":
        raise ValueError(f"not a diffusion file: kind={header.get('kind')!r}")

    def std(prefix):
        return Standardizer(
            mean=arrays[f"{prefix}_mean"],
            std=arrays[f"{prefix}_scale"],
            flagged=arrays[f"{prefix}_flagged"] > 0.5,
        )

    return DiffusionModel(
        denoiser=neural.mlp_from_arrays("den", header["denoiser"], arrays),
        schedule=NoiseSchedule.linear(
            header["T"], header["beta_start"], header["beta_end"]
        ),
        prediction_mode=header["prediction_mode"],
        latent_dim=header["latent_dim"],
        latent_std=std("z"),
        cond_std=std("c"),
        design_space=header["design_space"],
        report=header["report"],
    )
