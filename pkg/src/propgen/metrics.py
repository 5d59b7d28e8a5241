"""Evaluation metrics for generated designs.

Diversity is measured in the standardized design space: the spread
coefficient is the mean distance of a sample set to its own centroid, and
conditional novelty is the mean nearest-neighbor distance to the training
designs (exact brute-force scan). Condition matching is reported as a mean
percent error and a relative L2 error per target quantity; both formulas
are our convention and are meant for ordering comparisons between models
rather than absolute benchmarking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from propgen.datagen import GenerativeData, Standardizer
from propgen.geometry import DESIGN_DIM, PropellerSpec, flatten, unflatten
from propgen.hydro import evaluate_point
from propgen.surrogate import SurrogateModel, predict_batch

# raw conditioning-vector layout shared with the generative models
COND_J, COND_KT, COND_ETA, COND_D, COND_B = range(5)


def as_design_matrix(samples) -> np.ndarray:
    """Accept a list of DesignVector or an (n, 162) array; return the array."""
    if isinstance(samples, np.ndarray):
        mat = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    else:
        mat = np.array([flatten(d) for d in samples], dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != DESIGN_DIM:
        raise ValueError(f"expected (n, {DESIGN_DIM}) design samples")
    return mat


def spread_coefficient(samples, standardizer: Standardizer) -> float:
    """Mean standardized distance of the samples to their centroid."""
    x = standardizer.transform(as_design_matrix(samples))
    centroid = x.mean(axis=0)
    return float(np.mean(np.linalg.norm(x - centroid, axis=1)))


def conditional_novelty(samples, training_set, standardizer: Standardizer) -> float:
    """Mean nearest-neighbor distance from samples to the training designs.

    Exact brute-force scan in standardized space; duplicates in the
    training set do not change the result, so callers may deduplicate for
    speed.
    """
    x = standardizer.transform(as_design_matrix(samples))
    t = standardizer.transform(as_design_matrix(training_set))
    if len(t) == 0:
        raise ValueError("training set must be nonempty")
    nearest = np.empty(len(x))
    for i, row in enumerate(x):
        nearest[i] = np.min(np.linalg.norm(t - row, axis=1))
    return float(np.mean(nearest))


def unique_training_designs(dataset: GenerativeData, split: str = "train") -> np.ndarray:
    """Deduplicated design rows of one split (designs repeat across J)."""
    designs, _ = dataset.rows(split)
    return np.unique(designs, axis=0)


def surrogate_evaluator(model: SurrogateModel):
    """Evaluator mapping (designs, conditions) to predicted (K_T, eta)."""

    def evaluate(flat: np.ndarray, conds: np.ndarray):
        x = np.hstack(
            [flat, conds[:, [COND_D]], conds[:, [COND_B]], conds[:, [COND_J]]]
        )
        pred = predict_batch(model, x)
        return pred[:, 0], pred[:, 2]

    return evaluate


def solver_evaluator():
    """Evaluator running the blade-element solver on every design."""

    def evaluate(flat: np.ndarray, conds: np.ndarray):
        kt = np.empty(len(flat))
        eta = np.empty(len(flat))
        for i, row in enumerate(flat):
            spec = PropellerSpec(
                design=unflatten(row),
                diameter_m=float(conds[i, COND_D]),
                blades=int(conds[i, COND_B]),
            )
            point = evaluate_point(spec, float(conds[i, COND_J]))
            kt[i] = point.kt
            eta[i] = point.eta
        return kt, eta

    return evaluate


def condition_match_errors(generated, conditions, evaluator) -> dict:
    """Percent and relative-L2 condition-matching errors for K_T and eta.

    err_pct = mean_i |pred_i - target_i| / |target_i| * 100
    rel_l2  = ||pred - target||_2 / ||target||_2 * 100 (pooled)
    A single condition row is broadcast across all generated samples.
    """
    flat = as_design_matrix(generated)
    conds = np.atleast_2d(np.asarray(conditions, dtype=np.float64))
    if conds.shape[1] != 5:
        raise ValueError("conditions must be rows of [J, KT, eta, D, B]")
    if len(conds) == 1 and len(flat) > 1:
        conds = np.tile(conds, (len(flat), 1))
    if len(conds) != len(flat):
        raise ValueError("one condition row per sample (or a single shared row)")

    kt_pred, eta_pred = evaluator(flat, conds)
    report = {"err_pct": {}, "rel_l2": {}}
    for name, pred, target in (
        ("KT", kt_pred, conds[:, COND_KT]),
        ("eta", eta_pred, conds[:, COND_ETA]),
    ):
        if np.any(target == 0.0):
            raise ValueError(f"zero {name} target makes percent error undefined")
        report["err_pct"][name] = float(
            np.mean(np.abs(pred - target) / np.abs(target)) * 100.0
        )
        report["rel_l2"][name] = float(
            np.linalg.norm(pred - target) / np.linalg.norm(target) * 100.0
        )
    return report


@dataclass
class DiversityReport:
    """Spread and novelty, per condition and pooled over all samples."""

    sc_per_condition: list
    novelty_per_condition: list
    sc_pooled: float
    novelty_pooled: float
    counts: list
    n_reference: int  # size of the (deduplicated) training reference


def diversity_report(
    batches, training_designs, standardizer: Standardizer
) -> DiversityReport:
    """Evaluate per-condition sample matrices against a training reference."""
    mats = [as_design_matrix(b) for b in batches]
    if not mats:
        raise ValueError("need at least one batch")
    reference = as_design_matrix(training_designs)
    pooled = np.vstack(mats)
    return DiversityReport(
        sc_per_condition=[spread_coefficient(m, standardizer) for m in mats],
        novelty_per_condition=[
            conditional_novelty(m, reference, standardizer) for m in mats
        ],
        sc_pooled=spread_coefficient(pooled, standardizer),
        novelty_pooled=conditional_novelty(pooled, reference, standardizer),
        counts=[len(m) for m in mats],
        n_reference=len(reference),
    )


def build_protocol_conditions(
    dataset: GenerativeData,
    j: float = 0.6,
    per_blade: int = 8,
    split: str = "val",
) -> np.ndarray:
    """Achievable evaluation conditions [J, KT, eta, D, B] from one split.

    For each blade count, rows at the requested advance ratio are sorted by
    K_T and sampled at evenly spaced quantiles, giving condition targets
    that real designs in the held-out split actually attain. The default
    split is "val": the generative data keeps an 80/20 train/val division,
    so val is its held-out portion.
    """
    _, conds6 = dataset.rows(split)
    rows = []
    for b in (4.0, 5.0):
        sel = (np.abs(conds6[:, 0] - j) < 1e-9) & (conds6[:, 5] == b)
        cand = conds6[sel]
        cand = cand[cand[:, 3] > 0.0]  # positive efficiency targets only
        if len(cand) < per_blade:
            raise ValueError(
                f"split {split!r} has only {len(cand)} usable rows at J={j}, B={int(b)}"
            )
        order = np.argsort(cand[:, 1], kind="stable")
        picks = list(
            dict.fromkeys(np.round(np.linspace(0, len(cand) - 1, per_blade)).astype(int))
        )
        spare = (i for i in range(len(cand)) if i not in set(picks))
        while len(picks) < per_blade:  # quantile collisions on small splits
            picks.append(next(spare))
        for i in picks:
            r = cand[order[i]]
            rows.append([j, r[1], r[3], r[4], b])
    return np.array(rows, dtype=np.float64)
