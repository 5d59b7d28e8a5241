"""Constraint-aware design refinement.

CMA-ES searches the 162-dim design space from generated seed designs,
scoring candidates with a pluggable point evaluator (surrogate or solver)
against a scalarized penalty fitness: thrust mismatch, torque budget,
efficiency preference, blade-area-ratio bounds, and the classification-rule
minimum blade thickness at 0.25R and 0.6R. Final candidates are always
re-scored with the solver, whatever drove the search.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from propgen import surrogate as surrogate_mod
from propgen.geometry import (
    DESIGN_DIM,
    RADIAL_GRID,
    PropellerSpec,
    blade_area_ratio,
    flatten,
    interp_feature,
    is_physical,
    unflatten,
)
from propgen.hydro import (
    DesignBrief,
    SolverError,
    TargetCondition,
    evaluate_point,
    target_condition,
)

# fitness weights: thrust, torque, efficiency, BAR, thickness
DEFAULT_WEIGHTS = (1.0, 1.0, 0.25, 10.0, 10.0)

INF = float("inf")


# ---------------------------------------------------------------------------
# materials and the minimum-thickness rule


@dataclass(frozen=True)
class Material:
    """Classification-rule material row.

    r_m is the minimum tensile strength (N/mm^2), delta the density
    (kg/dm^3) and f the dimensionless material factor.
    """

    name: str
    r_m: float
    delta: float
    f: float


MATERIALS = {
    m.name: m
    for m in (
        Material("common bronze", 400.0, 8.3, 7.6),
        Material("manganese bronze", 440.0, 8.3, 7.6),
        Material("nickel-manganese bronze", 440.0, 8.3, 7.9),
        Material("aluminum bronze", 590.0, 7.6, 8.3),
        Material("steel", 440.0, 7.9, 9.0),
    )
}


def get_material(name: str) -> Material:
    """Material lookup tolerant of underscore/hyphen spelling."""
    key = name.strip().lower().replace("_", " ")
    if key in MATERIALS:
        return MATERIALS[key]
    key_h = key.replace("nickel manganese", "nickel-manganese")
    if key_h in MATERIALS:
        return MATERIALS[key_h]
    raise KeyError(f"unknown material {name!r}; known: {sorted(MATERIALS)}")


def transmitted_torque(p_kw: float, rpm: float) -> float:
    """Torque (kN m) transmitted at maximum continuous power (kW) and RPM."""
    if p_kw <= 0.0 or rpm <= 0.0:
        raise ValueError("power and RPM must be positive")
    return 9.55 * (p_kw / rpm)


@dataclass(frozen=True)
class ThicknessInputs:
    """Arguments of the minimum-thickness rule at the two reference radii.

    Thicknesses and expanded widths in mm, diameter in m, rake h in mm,
    torque m_t in kN m. rho_25 and rho_60 are the rule's D/H pitch ratios.
    """

    t_25: float
    t_60: float
    l_25: float
    l_60: float
    rho_25: float
    rho_60: float
    d_m: float
    bar: float
    rpm: float
    h_mm: float
    m_t: float
    blades: int

    def __post_init__(self):
        for name in (
            "t_25", "t_60", "l_25", "l_60", "rho_25", "rho_60",
            "d_m", "bar", "rpm", "m_t",
        ):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.h_mm < 0.0:
            raise ValueError("rake h must be nonnegative")
        if self.blades < 1:
            raise ValueError("need at least one blade")


def min_thickness(inputs: ThicknessInputs, material: Material):
    """Minimum blade thickness (mm) at 0.25R and 0.6R.

    Strength-rule bracket: a torque term proportional to rho * M_T plus a
    centrifugal rake term proportional to delta (D/100)^3 BAR l RPM^2 h,
    divided by l B R_m and scaled by the material factor.
    """
    if material.r_m <= 0.0:
        raise ValueError("tensile strength must be positive")
    d_cubed = (inputs.d_m / 100.0) ** 3

    def rule(coef, rho, length, rake_coef):
        torque_term = 1.5e6 * rho * inputs.m_t
        rake_term = (
            rake_coef * material.delta * d_cubed * inputs.bar
            * length * inputs.rpm**2 * inputs.h_mm
        )
        bracket = material.f * (torque_term + rake_term) / (
            length * inputs.blades * material.r_m
        )
        return coef * math.sqrt(bracket)

    return (
        rule(3.2, inputs.rho_25, inputs.l_25, 51.0),
        rule(1.9, inputs.rho_60, inputs.l_60, 18.4),
    )


def extract_thickness_inputs(spec: PropellerSpec, brief: DesignBrief) -> ThicknessInputs:
    """Bridge a design to the thickness rule's symbols.

    Thickness and chord are interpolated at 0.25R and 0.6R and converted to
    mm; H is the mean dimensional pitch over stations at or beyond 0.25R
    (excluding the hub fairing), H_0.6 the pitch at 0.6R; the rule's pitch
    ratios follow its D/H convention. h is the dimensional tip rake,
    floored at zero: forward rake earns no thickness relief. Torque comes
    from the brief's full power at its shaft speed.
    """
    design = spec.design
    d = spec.diameter_m
    mm = 1000.0 * d
    t_25 = interp_feature(design, "max_thickness", 0.25) * mm
    t_60 = interp_feature(design, "max_thickness", 0.6) * mm
    l_25 = interp_feature(design, "chord", 0.25) * mm
    l_60 = interp_feature(design, "chord", 0.6) * mm
    beyond_hub = RADIAL_GRID >= 0.25
    h_mean = float(np.mean(design.pitch[beyond_hub])) * d
    h_060 = interp_feature(design, "pitch", 0.6) * d
    rpm = 60.0 * brief.n
    return ThicknessInputs(
        t_25=t_25,
        t_60=t_60,
        l_25=l_25,
        l_60=l_60,
        rho_25=d / h_mean,
        rho_60=d / h_060,
        d_m=d,
        bar=blade_area_ratio(spec),
        rpm=rpm,
        h_mm=max(0.0, float(design.rake[-1]) * mm),
        m_t=transmitted_torque(brief.p_avail / 1000.0, rpm),
        blades=spec.blades,
    )


# ---------------------------------------------------------------------------
# fitness


def bar_violation(bar: float, bar_min: float, bar_max: float) -> float:
    """Relative distance outside the BAR bounds; zero inside."""
    if bar < bar_min:
        return (bar_min - bar) / bar_min
    if bar > bar_max:
        return (bar - bar_max) / bar_max
    return 0.0


def thickness_violation(t_25, t_60, t_min_25, t_min_60) -> float:
    """Summed relative thickness deficit over the two reference radii."""
    return max(0.0, (t_min_25 - t_25) / t_min_25) + max(
        0.0, (t_min_60 - t_60) / t_min_60
    )


def solver_point_evaluator():
    """Point evaluator backed by the momentum solver."""

    def ev(spec: PropellerSpec, j: float):
        p = evaluate_point(spec, j)
        if not p.converged or p.kq <= 0.0:
            raise SolverError(f"no converged positive-torque solution at J={j}")
        return p.kt, p.kq, p.eta

    return ev


def surrogate_point_evaluator(model):
    """Point evaluator backed by a trained performance surrogate."""

    def ev(spec: PropellerSpec, j: float):
        return surrogate_mod.predict(model, spec, j)

    return ev


def fitness(
    spec: PropellerSpec,
    brief: DesignBrief,
    target: TargetCondition,
    evaluator,
    weights=DEFAULT_WEIGHTS,
) -> float:
    """Scalarized refinement objective; lower is better, +inf on failure.

    Terms: relative thrust mismatch, relative torque-budget overshoot,
    efficiency shortfall (1 - eta), BAR bound violation and thickness-rule
    violation, combined with the given weights.
    """
    w_t, w_q, w_eta, w_bar, w_th = weights
    if not is_physical(spec.design):
        return INF
    try:
        kt, kq, eta = evaluator(spec, target.j_star)
        inputs = extract_thickness_inputs(spec, brief)
    except (ValueError, KeyError, RuntimeError):
        return INF
    if not all(map(math.isfinite, (kt, kq, eta))):
        return INF
    t_min_25, t_min_60 = min_thickness(inputs, get_material(brief.material))
    value = (
        w_t * abs(kt - target.kt_star) / target.kt_star
        + w_q * max(0.0, kq - target.kq_star) / target.kq_star
        + w_eta * (1.0 - eta)
        + w_bar * bar_violation(blade_area_ratio(spec), brief.bar_min, brief.bar_max)
        + w_th * thickness_violation(inputs.t_25, inputs.t_60, t_min_25, t_min_60)
    )
    return value if math.isfinite(value) else INF


# ---------------------------------------------------------------------------
# CMA-ES


@dataclass
class CmaResult:
    x_best: np.ndarray
    f_best: float
    history: list  # (generation, evaluations, generation best f, sigma)
    evaluations: int
    stop_reason: str


def cma_es_minimize(
    objective,
    x0,
    sigma0: float,
    budget: int,
    seed,
    scales=None,
    f_tol: float = 1e-10,
) -> CmaResult:
    """Rank-weighted (mu/mu_w, lambda) CMA-ES minimization.

    Cumulative step-size adaptation plus rank-one and rank-mu covariance
    updates; candidates returning NaN count as +inf. scales, when given,
    sets an anisotropic initial covariance diag(scales^2) so sigma0 acts
    per coordinate. Stops on the evaluation budget, on a flat recent-best
    window narrower than f_tol, or on step-size collapse.
    """
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    n = x0.size
    if n < 1:
        raise ValueError("need at least one coordinate")
    if sigma0 <= 0.0:
        raise ValueError("sigma0 must be positive")
    if scales is None:
        scales = np.ones(n)
    else:
        scales = np.asarray(scales, dtype=np.float64).reshape(-1)
        if scales.shape != (n,) or np.any(scales <= 0.0):
            raise ValueError("scales must be positive and match x0")

    lam = 4 + int(np.floor(3.0 * np.log(n)))
    mu = lam // 2
    raw = np.log((lam + 1) / 2.0) - np.log(np.arange(1, mu + 1))
    weights = raw / raw.sum()
    mu_eff = 1.0 / float(np.sum(weights**2))

    c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0)
    d_sigma = 1.0 + 2.0 * max(0.0, math.sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + c_sigma
    c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n)
    c_1 = 2.0 / ((n + 1.3) ** 2 + mu_eff)
    c_mu = min(
        1.0 - c_1,
        2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0) ** 2 + mu_eff),
    )
    chi_n = math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n))
    # refresh the eigendecomposition about every O(1/(n(c1+cmu))) generations
    eig_interval = max(1, int(1.0 / ((c_1 + c_mu) * n * 10.0)))

    rng = np.random.default_rng(seed)
    mean = x0.copy()
    sigma = float(sigma0)
    cov = np.diag(scales**2)
    p_sigma = np.zeros(n)
    p_c = np.zeros(n)
    eig_vals, eig_vecs = scales**2, np.eye(n)
    gens_since_eig = 0

    x_best = x0.copy()
    f_best = INF
    history = []
    evals = 0
    gen = 0
    window = 10 + int(np.ceil(30.0 * n / lam))
    recent = []
    stop = None

    while evals + lam <= budget:
        sqrt_vals = np.sqrt(eig_vals)
        z = rng.standard_normal((lam, n))
        y = (z * sqrt_vals) @ eig_vecs.T
        xs = mean + sigma * y
        fs = np.empty(lam)
        for k in range(lam):
            fk = objective(xs[k])
            fs[k] = INF if (fk is None or math.isnan(fk)) else fk
        evals += lam
        order = np.argsort(fs, kind="stable")
        gen_best = float(fs[order[0]])
        if gen_best < f_best:
            f_best = gen_best
            x_best = xs[order[0]].copy()

        y_sel = y[order[:mu]]
        y_w = weights @ y_sel
        mean = mean + sigma * y_w

        # C^{-1/2} y_w through the cached eigenbasis
        c_inv_half_yw = eig_vecs @ ((eig_vecs.T @ y_w) / sqrt_vals)
        p_sigma = (1.0 - c_sigma) * p_sigma + math.sqrt(
            c_sigma * (2.0 - c_sigma) * mu_eff
        ) * c_inv_half_yw
        norm_ps = float(np.linalg.norm(p_sigma))
        h_sigma = norm_ps / math.sqrt(
            1.0 - (1.0 - c_sigma) ** (2 * (gen + 1))
        ) < (1.4 + 2.0 / (n + 1.0)) * chi_n
        p_c = (1.0 - c_c) * p_c
        if h_sigma:
            p_c = p_c + math.sqrt(c_c * (2.0 - c_c) * mu_eff) * y_w

        delta_h = (1 - int(h_sigma)) * c_c * (2.0 - c_c)
        cov = (
            (1.0 - c_1 - c_mu) * cov
            + c_1 * (np.outer(p_c, p_c) + delta_h * cov)
            + c_mu * (y_sel.T * weights) @ y_sel
        )
        sigma *= math.exp((c_sigma / d_sigma) * (norm_ps / chi_n - 1.0))

        gens_since_eig += 1
        if gens_since_eig >= eig_interval:
            gens_since_eig = 0
            cov = (cov + cov.T) / 2.0
            eig_vals, eig_vecs = np.linalg.eigh(cov)
            floor = float(eig_vals[-1]) * 1e-14
            if eig_vals[0] < floor:  # repair near-singular directions
                eig_vals = np.maximum(eig_vals, floor)
                cov = (eig_vecs * eig_vals) @ eig_vecs.T

        gen += 1
        history.append((gen, evals, gen_best, sigma))
        recent.append(gen_best)
        if len(recent) > window:
            recent.pop(0)
        finite = [f for f in recent if math.isfinite(f)]
        if len(recent) == window and finite and max(finite) - min(finite) < f_tol:
            stop = "f_tol"
            break
        if sigma * math.sqrt(float(eig_vals[-1])) < 1e-15:
            stop = "sigma_collapse"
            break

    return CmaResult(
        x_best=x_best,
        f_best=f_best,
        history=history,
        evaluations=evals,
        stop_reason=stop or "budget",
    )


# ---------------------------------------------------------------------------
# refinement driver


@dataclass
class RefinementResult:
    """Outcome for one seed: the refined design and its solver audit."""

    seed_index: int
    spec: PropellerSpec
    fitness: float
    evaluations: int
    stop_reason: str
    solver_kt: float
    solver_kq: float
    solver_eta: float
    solver_converged: bool
    thrust_error: float  # |K_T - K_T*| / K_T* from the solver audit
    torque_ok: bool
    bar: float
    bar_ok: bool
    t_25: float
    t_60: float
    t_min_25: float
    t_min_60: float
    thickness_ok: bool
    history: list

    @property
    def feasible(self) -> bool:
        return self.torque_ok and self.bar_ok and self.thickness_ok


@dataclass
class RefinementReport:
    results: list
    best_effort: bool = False  # True when no seed reached feasibility
    target: TargetCondition = None

    def best(self) -> RefinementResult:
        feasible = [r for r in self.results if r.feasible]
        pool = feasible or self.results
        return min(pool, key=lambda r: r.fitness)


def _audit(spec, brief, target) -> dict:
    """Solver re-score and constraint summary for a final candidate."""
    point = evaluate_point(spec, target.j_star)
    inputs = extract_thickness_inputs(spec, brief)
    t_min_25, t_min_60 = min_thickness(inputs, get_material(brief.material))
    bar = blade_area_ratio(spec)
    usable = point.converged and point.kq > 0.0
    return {
        "solver_kt": point.kt,
        "solver_kq": point.kq,
        "solver_eta": point.eta,
        "solver_converged": bool(usable),
        "thrust_error": (
            abs(point.kt - target.kt_star) / target.kt_star if usable else INF
        ),
        "torque_ok": bool(usable and point.kq <= target.kq_star * (1.0 + 1e-9)),
        "bar": bar,
        "bar_ok": bool(brief.bar_min <= bar <= brief.bar_max),
        "t_25": inputs.t_25,
        "t_60": inputs.t_60,
        "t_min_25": t_min_25,
        "t_min_60": t_min_60,
        "thickness_ok": bool(
            inputs.t_25 >= t_min_25 and inputs.t_60 >= t_min_60
        ),
    }


def refine(
    seeds,
    brief: DesignBrief,
    evaluator,
    training_std,
    budget: int = 20000,
    weights=DEFAULT_WEIGHTS,
    seed=0,
) -> RefinementReport:
    """Refine each seed design against the brief with CMA-ES.

    The search runs over the flattened 162-dim design with diameter and
    blade count pinned to the brief; the initial per-coordinate step is
    5% of the training-set standard deviation (floored so near-constant
    coordinates keep the covariance positive definite). Final candidates
    are re-scored with the solver regardless of the search evaluator.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed design")
    training_std = np.asarray(training_std, dtype=np.float64).reshape(-1)
    if training_std.shape != (DESIGN_DIM,):
        raise ValueError(f"training_std must have {DESIGN_DIM} entries")
    target = target_condition(brief)
    scales = 0.05 * training_std
    scales = np.maximum(scales, 1e-6 * float(scales.max()))
    if scales.max() <= 0.0:
        raise ValueError("training_std must have a positive entry")

    def objective_for(x):
        spec = PropellerSpec(unflatten(x), brief.diameter_m, brief.blades)
        return fitness(spec, brief, target, evaluator, weights)

    results = []
    root = np.random.SeedSequence(seed)
    for i, (seed_spec, child) in enumerate(zip(seeds, root.spawn(len(seeds)))):
        run = cma_es_minimize(
            objective_for,
            flatten(seed_spec.design),
            sigma0=1.0,
            budget=budget,
            seed=child,
            scales=scales,
        )
        best_spec = PropellerSpec(
            unflatten(run.x_best), brief.diameter_m, brief.blades
        )
        audit = _audit(best_spec, brief, target)
        results.append(
            RefinementResult(
                seed_index=i,
                spec=best_spec,
                fitness=run.f_best,
                evaluations=run.evaluations,
                stop_reason=run.stop_reason,
                history=run.history,
                **audit,
            )
        )
    return RefinementReport(
        results=results,
        best_effort=not any(r.feasible for r in results),
        target=target,
    )
