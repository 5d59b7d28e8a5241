"""Command-line front end wiring all toolkit stages together.

Subcommands cover the full workflow: dataset synthesis (gendata), model
training (train-surrogate, train-cvae, train-ldm), sampling (generate),
physics checks (simulate, predict, plot), constraint-aware refinement
(refine), generative-model comparison (metrics), and a one-shot
reproduction of the whole study at desk scale (pipeline).

Conventions
-----------
* every run prints its resolved configuration, seed included
* `--seed` fully determines all stochastic outputs
* `--threads` (or the PROPGEN_THREADS env var) caps worker threads; the
  current implementation runs sequentially either way, so outputs never
  depend on it
* briefs and manifests are JSON; bulk numerics are CSV
* `plot` follows the usual open-water chart convention of drawing
  10*K_Q so thrust, torque and efficiency share one axis
"""

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import pandas as pd

from . import cvae as cvae_mod
from . import datagen
from . import hydro
from . import ldm as ldm_mod
from . import metrics as metrics_mod
from . import neural
from . import plotting
from . import refine as refine_mod
from . import surrogate as surrogate_mod
from .geometry import PropellerSpec, is_physical, load_design, save_design, unflatten

DEFAULT_THREADS = int(os.environ.get("PROPGEN_THREADS", "1"))

BRIEF_FIELDS = (
    "v_a", "t_req", "n", "p_avail", "diameter_m", "blades",
    "rho", "bar_min", "bar_max", "material",
)

PIPELINE_SCALES = {
    "desk": dict(
        n_designs=3000, surr_epochs=80, cvae_epochs=3000, cvae_beta=0.07,
        vae_epochs=200, diff_epochs=40, samples=20, budget=4000, n_seeds=2,
        per_blade=8,
    ),
    "mini": dict(
        n_designs=400, surr_epochs=6, cvae_epochs=40, cvae_beta=0.07,
        vae_epochs=8, diff_epochs=4, samples=3, budget=300, n_seeds=1,
        per_blade=2,
    ),
}

# brief used by `pipeline`: the showcase operating point [J=0.6, KT=0.1,
# eta=0.75, D=2.3, B=4] restated as dimensional requirements
PIPELINE_BRIEF = dict(
    v_a=3.45, t_req=17927.0, n=2.5, p_avail=120000.0,
    diameter_m=2.3, blades=4, rho=1025.0,
    bar_min=0.1, bar_max=0.6, material="manganese bronze",
)
PIPELINE_CONDITION = (0.6, 0.1, 0.75, 2.3, 4.0)


def log_config(args) -> None:
    pairs = sorted(
        (k, v) for k, v in vars(args).items() if k != "func" and v is not None
    )
    print("config:", " ".join(f"{k}={v}" for k, v in pairs))


def save_brief(path, brief: hydro.DesignBrief) -> None:
    payload = {name: getattr(brief, name) for name in BRIEF_FIELDS}
    Path(path).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_brief(path, material=None) -> hydro.DesignBrief:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    unknown = set(payload) - set(BRIEF_FIELDS)
    if unknown:
        raise ValueError(f"{path}: unknown brief fields {sorted(unknown)}")
    if material is not None:
        payload["material"] = material
    payload["blades"] = int(payload["blades"])
    return hydro.DesignBrief(**payload)


def parse_condition(text: str) -> np.ndarray:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 5:
        raise ValueError("condition must be 5 comma-separated values: J,KT,eta,D,B")
    return np.array(parts)


def vae_companion(model_path) -> Path:
    """Path of the latent VAE saved alongside a diffusion model."""
    p = Path(model_path)
    return p.with_name(p.stem + ".vae" + p.suffix)


def load_generator(model_path, data_dir=None):
    """Open any generative model file: returns (kind, sample_fn)."""
    header, _ = neural.load_arrays(model_path)
    kind = header.get("kind")
    if kind == "cvae":
        model = cvae_mod.load_cvae(model_path)
        return "cvae", lambda cond, n, seed: cvae_mod.generate(model, cond, n, seed)
    if kind == "diffusion":
        model = ldm_mod.load_diffusion(model_path)
        if model.design_space:
            if data_dir is None:
                raise ValueError(
                    "design-space diffusion model needs --data for the design scaler"
                )
            gd = datagen.load_generative_data(data_dir)
            return "ldm-design-space", lambda cond, n, seed: ldm_mod.sample_design_space(
                model, gd.design_std, cond, n, seed
            )
        vae = ldm_mod.load_latent_vae(vae_companion(model_path))
        return "ldm", lambda cond, n, seed: ldm_mod.sample(model, vae, cond, n, seed)
    raise ValueError(f"{model_path}: not a generative model (kind={kind!r})")


def write_generated_csv(path, flats: np.ndarray, conditions: np.ndarray) -> None:
    """Bulk CSV of generated designs: d0..d161, condition echo, physical."""
    frame = pd.DataFrame(flats, columns=datagen.DESIGN_COLUMNS)
    for i, name in enumerate(cvae_mod.COND_FIELDS):
        frame[name] = conditions[:, i]
    frame["physical"] = [int(is_physical(unflatten(f))) for f in flats]
    frame.to_csv(path, index=False)


def spec_from_args(args) -> PropellerSpec:
    design = load_design(args.design)
    return PropellerSpec(design, args.D, args.B)


# ------------------------------------------------------------- subcommands


def cmd_gendata(args) -> int:
    log_config(args)
    t0 = time.time()
    manifest = datagen.build_dataset(args.n, args.seed, args.out)
    print(
        f"dataset written to {args.out}: {manifest.n_designs} designs, "
        f"surrogate rows {sum(manifest.surrogate_rows.values())}, "
        f"generative rows {sum(manifest.generative_rows.values())}, "
        f"{time.time() - t0:.1f}s"
    )
    return 0


def cmd_train_surrogate(args) -> int:
    log_config(args)
    data = datagen.load_surrogate_data(args.data)
    hyper = surrogate_mod.SurrogateHyper(
        lr=args.lr, batch=args.batch, epochs=args.epochs, seed=args.seed
    )
    model = surrogate_mod.train_surrogate(data, hyper)
    surrogate_mod.save_surrogate(args.out, model)
    scores = surrogate_mod.test_metrics(model, data.rows("test"))
    line = " ".join(f"{k}: R2={v['r2']:.4f}" for k, v in scores.items())
    print(f"saved {args.out}; test {line}")
    return 0


def cmd_train_cvae(args) -> int:
    log_config(args)
    data = datagen.load_generative_data(args.data)
    hyper = cvae_mod.CvaeHyper(
        beta=args.beta, lr=args.lr, batch=args.batch,
        epochs=args.epochs, seed=args.seed,
    )
    model = cvae_mod.train_cvae(data, hyper)
    cvae_mod.save_cvae(args.out, model)
    print(
        f"saved {args.out}; beta={model.beta} "
        f"best val loss={model.report.get('best_val_loss', float('nan')):.5f}"
    )
    return 0


def cmd_train_ldm(args) -> int:
    log_config(args)
    data = datagen.load_generative_data(args.data)
    vae = ldm_mod.train_latent_vae(
        data,
        ldm_mod.VaeHyper(
            beta_vae=args.beta_vae, epochs=args.vae_epochs, seed=args.seed
        ),
    )
    vae_path = vae_companion(args.out)
    ldm_mod.save_latent_vae(vae_path, vae)
    hyper = ldm_mod.DiffusionHyper(
        mode=args.mode, T=args.T, lr=args.lr, batch=args.batch,
        epochs=args.epochs, seed=args.seed,
    )
    model = ldm_mod.train_diffusion(vae, data, hyper)
    ldm_mod.save_diffusion(args.out, model)
    print(f"saved {args.out} (mode={args.mode}, T={args.T}) and {vae_path}")
    return 0


def cmd_generate(args) -> int:
    log_config(args)
    cond = parse_condition(args.condition)
    kind, gen = load_generator(args.model, args.data)
    batch = gen(cond, args.n, np.random.SeedSequence([args.seed]))
    write_generated_csv(args.out, batch.flat, np.tile(cond, (len(batch.flat), 1)))
    print(
        f"{kind}: wrote {len(batch.flat)} designs to {args.out} "
        f"({batch.n_unphysical} unphysical)"
    )
    return 0


def cmd_predict(args) -> int:
    log_config(args)
    model = surrogate_mod.load_surrogate(args.model)
    kt, kq, eta = surrogate_mod.predict(model, spec_from_args(args), args.J)
    print(f"J={args.J:g} KT={kt:.6f} KQ={kq:.6f} eta={eta:.6f}")
    return 0


def cmd_simulate(args) -> int:
    log_config(args)
    curve = hydro.evaluate_curve(spec_from_args(args))
    hydro.save_curve(args.out, curve)
    svg_path = args.svg or str(Path(args.out).with_suffix(".svg"))
    plotting.write_chart(svg_path, plotting.chart_from_curve(curve))
    print(f"wrote {len(curve)} curve points to {args.out} and chart to {svg_path}")
    return 0


def cmd_plot(args) -> int:
    log_config(args)
    curve = hydro.load_curve(args.curve)
    plotting.write_chart(args.out, plotting.chart_from_curve(curve))
    print(f"wrote chart to {args.out}")
    return 0


def _write_refine_outputs(out_dir: Path, report) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for res in report.results:
        rows.append(
            dict(
                seed_index=res.seed_index,
                fitness=res.fitness,
                evaluations=res.evaluations,
                stop_reason=res.stop_reason,
                solver_kt=res.solver_kt,
                solver_kq=res.solver_kq,
                solver_eta=res.solver_eta,
                thrust_error=res.thrust_error,
                bar=res.bar,
                t_25=res.t_25,
                t_min_25=res.t_min_25,
                t_60=res.t_60,
                t_min_60=res.t_min_60,
                feasible=int(res.feasible),
            )
        )
        hist = pd.DataFrame(
            res.history, columns=["generation", "evaluations", "best_fitness", "sigma"]
        )
        hist.to_csv(out_dir / f"history_seed{res.seed_index}.csv", index=False)
    pd.DataFrame(rows).to_csv(out_dir / "report.csv", index=False)
    best = report.best()
    save_design(out_dir / "best_design.csv", best.spec.design)
    header = (
        f"{'seed':>4} {'fitness':>12} {'evals':>7} {'thrust_err':>10} "
        f"{'bar':>6} {'thick_ok':>8} {'feasible':>8}"
    )
    print(header)
    for res in report.results:
        print(
            f"{res.seed_index:>4} {res.fitness:>12.5f} {res.evaluations:>7} "
            f"{res.thrust_error:>10.4f} {res.bar:>6.3f} "
            f"{str(res.thickness_ok):>8} {str(res.feasible):>8}"
        )
    print(
        f"best: seed {best.seed_index}, fitness {best.fitness:.5f}, "
        f"feasible {best.feasible}; outputs in {out_dir}"
    )


def cmd_refine(args) -> int:
    log_config(args)
    brief = load_brief(args.brief, args.material)
    seed_files = sorted(Path(args.seeds).glob("*.csv"))
    if not seed_files:
        raise ValueError(f"no seed design CSVs found in {args.seeds}")
    seeds = [
        PropellerSpec(load_design(p), brief.diameter_m, brief.blades)
        for p in seed_files
    ]
    if args.evaluator == "surrogate":
        if not args.model:
            raise ValueError("--evaluator surrogate needs --model")
        model = surrogate_mod.load_surrogate(args.model)
        evaluator = refine_mod.surrogate_point_evaluator(model)
    else:
        evaluator = refine_mod.solver_point_evaluator()
    gd = datagen.load_generative_data(args.data)
    x_tr, _ = gd.rows("train")
    report = refine_mod.refine(
        seeds, brief, evaluator,
        training_std=x_tr.std(axis=0),
        budget=args.budget, seed=args.seed,
    )
    _write_refine_outputs(Path(args.out), report)
    return 0


def _metrics_rows(model_paths, gd, samples, seed, out_dir, per_blade=8):
    conds = metrics_mod.build_protocol_conditions(gd, per_blade=per_blade)
    evaluator = metrics_mod.solver_evaluator()
    x_train, _ = gd.rows("train")
    rows = []
    for model_path in model_paths:
        kind, gen = load_generator(model_path)
        stem = Path(model_path).stem
        per_b = {}
        flats, cond_rows, unphysical = [], [], 0
        for ci, cond in enumerate(conds):
            batch = gen(cond, samples, np.random.SeedSequence([seed, ci]))
            flats.append(batch.flat)
            cond_rows.append(np.tile(cond, (len(batch.flat), 1)))
            unphysical += batch.n_unphysical
            per_b.setdefault(int(cond[4]), []).append(batch.flat)
        flats = np.vstack(flats)
        cond_rows = np.vstack(cond_rows)
        write_generated_csv(out_dir / f"{stem}_generated.csv", flats, cond_rows)
        errs = metrics_mod.condition_match_errors(flats, cond_rows, evaluator)
        row = dict(
            model=stem,
            kind=kind,
            kt_err_pct=errs["err_pct"]["KT"],
            eta_err_pct=errs["err_pct"]["eta"],
            unphysical_pct=100.0 * unphysical / len(flats),
        )
        for b, mats in sorted(per_b.items()):
            pooled = np.vstack(mats)
            row[f"spread_b{b}"] = metrics_mod.spread_coefficient(
                pooled, gd.design_std
            )
            row[f"novelty_b{b}"] = metrics_mod.conditional_novelty(
                pooled, x_train, gd.design_std
            )
        rows.append(row)
    return rows


def _print_metrics_table(rows) -> None:
    cols = list(rows[0].keys())
    widths = {
        c: max(len(c), *(len(f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]))
                         for r in rows))
        for c in cols
    }
    print("  ".join(c.rjust(widths[c]) for c in cols))
    for r in rows:
        cells = [
            (f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c])).rjust(widths[c])
            for c in cols
        ]
        print("  ".join(cells))


def cmd_metrics(args) -> int:
    log_config(args)
    out_dir = Path(args.generated)
    out_dir.mkdir(parents=True, exist_ok=True)
    gd = datagen.load_generative_data(args.training)
    model_paths = [p.strip() for p in args.models.split(",") if p.strip()]
    if not model_paths:
        raise ValueError("--models must list at least one model file")
    rows = _metrics_rows(
        model_paths, gd, args.samples, args.seed, out_dir, args.per_blade
    )
    pd.DataFrame(rows).to_csv(out_dir / "metrics.csv", index=False)
    _print_metrics_table(rows)
    print(f"wrote {out_dir / 'metrics.csv'}")
    return 0


def cmd_pipeline(args) -> int:
    log_config(args)
    cfg = PIPELINE_SCALES[args.scale]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()

    data_dir = out / "data"
    datagen.build_dataset(cfg["n_designs"], args.seed, data_dir)
    print(f"[pipeline] dataset done {time.time() - t0:.0f}s")

    surr_data = datagen.load_surrogate_data(data_dir)
    surr = surrogate_mod.train_surrogate(
        surr_data, surrogate_mod.SurrogateHyper(epochs=cfg["surr_epochs"], seed=args.seed)
    )
    surrogate_mod.save_surrogate(out / "surrogate.bin", surr)
    print(f"[pipeline] surrogate done {time.time() - t0:.0f}s")

    gen_data = datagen.load_generative_data(data_dir)
    cvae_model = cvae_mod.train_cvae(
        gen_data,
        cvae_mod.CvaeHyper(
            beta=cfg["cvae_beta"], epochs=cfg["cvae_epochs"], seed=args.seed
        ),
    )
    cvae_mod.save_cvae(out / "cvae.bin", cvae_model)
    print(f"[pipeline] cvae done {time.time() - t0:.0f}s")

    vae = ldm_mod.train_latent_vae(
        gen_data, ldm_mod.VaeHyper(epochs=cfg["vae_epochs"], seed=args.seed)
    )
    ldm_mod.save_latent_vae(out / "ldm.vae.bin", vae)
    ldm_model = ldm_mod.train_diffusion(
        vae, gen_data,
        ldm_mod.DiffusionHyper(epochs=cfg["diff_epochs"], seed=args.seed),
    )
    ldm_mod.save_diffusion(out / "ldm.bin", ldm_model)
    print(f"[pipeline] ldm done {time.time() - t0:.0f}s")

    gen_dir = out / "generated"
    gen_dir.mkdir(exist_ok=True)
    rows = _metrics_rows(
        [out / "cvae.bin", out / "ldm.bin"], gen_data,
        cfg["samples"], args.seed, gen_dir, cfg["per_blade"],
    )
    pd.DataFrame(rows).to_csv(gen_dir / "metrics.csv", index=False)
    _print_metrics_table(rows)
    print(f"[pipeline] protocol metrics done {time.time() - t0:.0f}s")

    refine_dir = out / "refine"
    refine_dir.mkdir(exist_ok=True)
    brief = hydro.DesignBrief(**PIPELINE_BRIEF)
    save_brief(refine_dir / "brief.json", brief)
    batch = cvae_mod.generate(
        cvae_model, np.array(PIPELINE_CONDITION), max(4, cfg["n_seeds"]),
        np.random.SeedSequence([args.seed, 997]),
    )
    keep = np.flatnonzero(batch.physical)[: cfg["n_seeds"]]
    if keep.size == 0:  # fall back to the fleet baseline
        seeds = [PropellerSpec(datagen.baseline_design(), brief.diameter_m, brief.blades)]
    else:
        seeds = [
            PropellerSpec(unflatten(batch.flat[i]), brief.diameter_m, brief.blades)
            for i in keep
        ]
    seeds_dir = refine_dir / "seeds"
    seeds_dir.mkdir(exist_ok=True)
    for i, spec in enumerate(seeds):
        save_design(seeds_dir / f"seed{i}.csv", spec.design)
    x_tr, _ = gen_data.rows("train")
    report = refine_mod.refine(
        seeds, brief, refine_mod.surrogate_point_evaluator(surr),
        training_std=x_tr.std(axis=0),
        budget=cfg["budget"], seed=args.seed,
    )
    _write_refine_outputs(refine_dir, report)

    summary = [
        f"scale: {args.scale}",
        f"seed: {args.seed}",
        f"designs: {cfg['n_designs']}",
        "metrics: " + json.dumps(rows, sort_keys=True, default=float),
        f"refine_best_fitness: {report.best().fitness!r}",
        f"refine_best_feasible: {report.best().feasible}",
    ]
    (out / "pipeline_report.txt").write_text("\n".join(summary) + "\n", "utf-8")
    print(f"[pipeline] complete in {time.time() - t0:.0f}s; outputs in {out}")
    return 0


# -------------------------------------------------------------- the parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="propgen",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(
            name, help=help_text,
            formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        )
        p.add_argument(
            "--threads", type=int, default=DEFAULT_THREADS,
            help="worker-thread cap; results never depend on it",
        )
        p.set_defaults(func=func)
        return p

    p = add("gendata", cmd_gendata, "synthesize a solver-labeled dataset")
    p.add_argument("--n", type=int, default=3000, help="number of designs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output dataset directory")

    p = add("train-surrogate", cmd_train_surrogate, "fit the K_T/K_Q/eta regressor")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=80)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--seed", type=int, default=0)

    p = add("train-cvae", cmd_train_cvae, "fit the conditional VAE generator")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beta", type=float, default=0.07, help="KL weight")
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--epochs", type=int, default=3000)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)

    p = add("train-ldm", cmd_train_ldm, "fit the latent diffusion generator")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="diffusion file; VAE lands beside it")
    p.add_argument("--beta-vae", type=float, default=ldm_mod.VAE_BETA_DEFAULT,
                   dest="beta_vae", help="KL weight of the stage-1 VAE")
    p.add_argument("--mode", choices=("epsilon", "velocity"), default="velocity")
    p.add_argument("--T", type=int, default=ldm_mod.DEFAULT_T, help="diffusion steps")
    p.add_argument("--epochs", type=int, default=40, help="denoiser epochs")
    p.add_argument("--vae-epochs", type=int, default=200, dest="vae_epochs")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)

    p = add("generate", cmd_generate, "sample designs from a trained generator")
    p.add_argument("--model", required=True, help="cvae.bin or ldm.bin")
    p.add_argument("--condition", required=True, help="J,KT,eta,D,B")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="generated.csv")
    p.add_argument("--data", help="dataset dir (design-space ablation models only)")

    p = add("predict", cmd_predict, "surrogate prediction at one operating point")
    p.add_argument("--model", required=True)
    p.add_argument("--design", required=True, help="design CSV")
    p.add_argument("--D", type=float, required=True, help="diameter, m")
    p.add_argument("--B", type=int, required=True, help="blade count")
    p.add_argument("--J", type=float, required=True, help="advance ratio")

    p = add("simulate", cmd_simulate, "run the open-water solver over a J sweep")
    p.add_argument("--design", required=True, help="design CSV")
    p.add_argument("--D", type=float, required=True)
    p.add_argument("--B", type=int, required=True)
    p.add_argument("--out", default="curve.csv", help="curve CSV path")
    p.add_argument("--svg", help="chart path (default: curve path with .svg)")

    p = add("plot", cmd_plot, "render an open-water chart (K_T, 10 K_Q, eta vs J)")
    p.add_argument("--curve", required=True, help="curve CSV from simulate")
    p.add_argument("--out", required=True, help="SVG path")

    p = add("refine", cmd_refine, "CMA-ES refinement of seed designs to a brief")
    p.add_argument("--brief", required=True, help="brief JSON")
    p.add_argument("--seeds", required=True, help="directory of seed design CSVs")
    p.add_argument("--evaluator", choices=("surrogate", "solver"), default="surrogate")
    p.add_argument("--model", help="surrogate model (surrogate evaluator only)")
    p.add_argument("--data", required=True, help="dataset dir for search scaling")
    p.add_argument("--budget", type=int, default=20000)
    p.add_argument("--material", help="override the brief's material")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="refined", help="output directory")

    p = add("metrics", cmd_metrics, "compare generative models on the protocol")
    p.add_argument("--generated", required=True, help="output directory")
    p.add_argument("--training", required=True, help="dataset directory")
    p.add_argument("--models", required=True, help="comma-separated model files")
    p.add_argument("--samples", type=int, default=20, help="samples per condition")
    p.add_argument("--per-blade", type=int, default=8, dest="per_blade",
                   help="protocol conditions per blade count")
    p.add_argument("--seed", type=int, default=0)

    p = add("pipeline", cmd_pipeline, "full reproduction: data, training, protocol")
    p.add_argument("--scale", choices=sorted(PIPELINE_SCALES), default="desk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="pipeline_out", help="output directory")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
