"""Refinement tests: thickness rule, fitness terms, CMA-ES, driver."""

import dataclasses
import math

import numpy as np
import pytest

from propgen import refine
from propgen.datagen import baseline_design, reference_designs
from propgen.geometry import DesignVector, PropellerSpec, flatten
from propgen.hydro import DesignBrief, SolverError, target_condition

# frozen golden values for the minimum-thickness rule, evaluated once by
# hand with 30-digit decimal arithmetic directly from the printed formulas
GOLDEN_CASE_1 = {
    "material": refine.Material("manganese bronze", 440.0, 8.3, 7.6),
    "inputs": dict(
        t_25=90.0, t_60=50.0, l_25=500.0, l_60=600.0, rho_25=2.0, rho_60=1.8,
        d_m=2.0, bar=0.55, rpm=300.0, h_mm=0.0, m_t=31.8333, blades=4,
    ),
    "expected": (91.9002931640393, 47.2553681690816),
}
GOLDEN_CASE_2 = {  # nonzero rake exercises the centrifugal term
    "material": refine.Material("steel", 440.0, 7.9, 9.0),
    "inputs": dict(
        t_25=70.0, t_60=30.0, l_25=320.0, l_60=410.0, rho_25=1.25, rho_60=1.1,
        d_m=1.5, bar=0.8, rpm=600.0, h_mm=40.0, m_t=12.5, blades=5,
    ),
    "expected": (61.0278012068717, 28.7467458066354),
}


def make_inputs(**overrides):
    base = dict(GOLDEN_CASE_1["inputs"])
    base.update(overrides)
    return refine.ThicknessInputs(**base)


def constant_design(
    chord=0.25, skew=5.0, thickness=0.03, rake=0.0, pitch=1.0, camber=0.02
):
    ones = np.ones(27)
    return DesignVector(
        chord * ones, skew * ones, thickness * ones,
        rake * ones, pitch * ones, camber * ones,
    )


# --------------------------------------------------------------- materials


def test_material_table():
    rows = {
        "common bronze": (400.0, 8.3, 7.6),
        "manganese bronze": (440.0, 8.3, 7.6),
        "nickel-manganese bronze": (440.0, 8.3, 7.9),
        "aluminum bronze": (590.0, 7.6, 8.3),
        "steel": (440.0, 7.9, 9.0),
    }
    assert set(refine.MATERIALS) == set(rows)
    for name, (r_m, delta, f) in rows.items():
        m = refine.MATERIALS[name]
        assert (m.r_m, m.delta, m.f) == (r_m, delta, f)


def test_get_material_spelling_variants():
    assert refine.get_material("aluminum_bronze").name == "aluminum bronze"
    assert refine.get_material("Steel").name == "steel"
    assert (
        refine.get_material("nickel_manganese_bronze").name
        == "nickel-manganese bronze"
    )
    with pytest.raises(KeyError):
        refine.get_material("titanium")


def test_transmitted_torque():
    assert refine.transmitted_torque(1000.0, 300.0) == pytest.approx(
        31.8333333333, rel=1e-10
    )
    assert refine.transmitted_torque(955.0, 955.0) == pytest.approx(9.55)
    half = refine.transmitted_torque(1000.0, 600.0)
    assert half == pytest.approx(refine.transmitted_torque(1000.0, 300.0) / 2.0)
    with pytest.raises(ValueError):
        refine.transmitted_torque(0.0, 300.0)
    with pytest.raises(ValueError):
        refine.transmitted_torque(100.0, -1.0)


# ---------------------------------------------------------- thickness rule


@pytest.mark.parametrize("case", [GOLDEN_CASE_1, GOLDEN_CASE_2])
def test_min_thickness_golden(case):
    t25, t60 = refine.min_thickness(
        refine.ThicknessInputs(**case["inputs"]), case["material"]
    )
    e25, e60 = case["expected"]
    assert t25 == pytest.approx(e25, rel=1e-9)
    assert t60 == pytest.approx(e60, rel=1e-9)


def test_zero_rake_kills_rpm_and_bar():
    material = GOLDEN_CASE_1["material"]
    base = refine.min_thickness(make_inputs(h_mm=0.0, rpm=300.0), material)
    fast = refine.min_thickness(make_inputs(h_mm=0.0, rpm=1200.0), material)
    wide = refine.min_thickness(make_inputs(h_mm=0.0, bar=1.1), material)
    assert base == fast == wide


def test_tensile_strength_strictly_lowers_minima():
    inputs = make_inputs(h_mm=25.0)
    weak = refine.min_thickness(inputs, refine.Material("a", 350.0, 8.3, 7.6))
    strong = refine.min_thickness(inputs, refine.Material("b", 600.0, 8.3, 7.6))
    assert strong[0] < weak[0] and strong[1] < weak[1]


def test_min_thickness_monotonicity_random():
    rng = np.random.default_rng(42)
    for _ in range(150):
        base = dict(
            t_25=50.0, t_60=30.0,
            l_25=float(rng.uniform(100, 900)),
            l_60=float(rng.uniform(100, 900)),
            rho_25=float(rng.uniform(0.5, 2.5)),
            rho_60=float(rng.uniform(0.5, 2.5)),
            d_m=float(rng.uniform(0.5, 2.5)),
            bar=float(rng.uniform(0.3, 1.2)),
            rpm=float(rng.uniform(100, 1200)),
            h_mm=float(rng.uniform(0.0, 80.0)),
            m_t=float(rng.uniform(1.0, 200.0)),
            blades=int(rng.choice([4, 5])),
        )
        material = refine.Material(
            "m",
            float(rng.uniform(300, 700)),
            float(rng.uniform(7, 9)),
            float(rng.uniform(7, 10)),
        )
        ref = refine.min_thickness(refine.ThicknessInputs(**base), material)
        for name in ("m_t", "rpm", "bar", "h_mm"):
            up = dict(base)
            up[name] = base[name] * 1.3 + 1.0
            out = refine.min_thickness(refine.ThicknessInputs(**up), material)
            assert out[0] >= ref[0] - 1e-12 and out[1] >= ref[1] - 1e-12, name
        longer = dict(base)
        longer["l_25"] = base["l_25"] * 1.4
        longer["l_60"] = base["l_60"] * 1.4
        out = refine.min_thickness(refine.ThicknessInputs(**longer), material)
        assert out[0] <= ref[0] + 1e-12 and out[1] <= ref[1] + 1e-12
        stronger = dataclasses.replace(material, r_m=material.r_m * 1.2)
        out = refine.min_thickness(refine.ThicknessInputs(**base), stronger)
        assert out[0] < ref[0] and out[1] < ref[1]


def test_thickness_inputs_validation():
    with pytest.raises(ValueError):
        make_inputs(l_25=0.0)
    with pytest.raises(ValueError):
        make_inputs(h_mm=-1.0)
    with pytest.raises(ValueError):
        make_inputs(m_t=-5.0)
    with pytest.raises(ValueError):
        make_inputs(blades=0)
    with pytest.raises(ValueError):
        refine.min_thickness(make_inputs(), refine.Material("x", -1.0, 8.3, 7.6))


# -------------------------------------------------------------- extraction


def brief_for(spec, power_w=1.0e6, n=5.0, bar=(0.1, 0.9)):
    return DesignBrief(
        v_a=6.0,
        t_req=82000.0,
        n=n,
        p_avail=power_w,
        diameter_m=spec.diameter_m,
        blades=spec.blades,
        bar_min=bar[0],
        bar_max=bar[1],
        material="manganese bronze",
    )


def test_extract_thickness_inputs_constant_design():
    spec = PropellerSpec(constant_design(), 2.0, 4)
    brief = brief_for(spec)
    inputs = refine.extract_thickness_inputs(spec, brief)
    # uniform P/D = 1.0 on a 2 m screw: mean pitch and pitch at 0.6R both 2 m
    assert inputs.rho_25 == pytest.approx(1.0)
    assert inputs.rho_60 == pytest.approx(1.0)
    assert inputs.h_mm == 0.0
    assert inputs.l_25 == pytest.approx(500.0)  # chord 0.25 D at D = 2 m
    assert inputs.l_60 == pytest.approx(500.0)
    assert inputs.t_25 == pytest.approx(60.0)  # thickness 0.03 D
    assert inputs.rpm == pytest.approx(300.0)
    assert inputs.m_t == pytest.approx(9.55 * 1000.0 / 300.0)
    assert inputs.blades == 4


def test_extract_floors_forward_rake():
    design = constant_design(rake=-0.02)
    spec = PropellerSpec(design, 2.0, 4)
    inputs = refine.extract_thickness_inputs(spec, brief_for(spec))
    assert inputs.h_mm == 0.0
    aft = constant_design(rake=0.02)
    spec2 = PropellerSpec(aft, 2.0, 4)
    inputs2 = refine.extract_thickness_inputs(spec2, brief_for(spec2))
    assert inputs2.h_mm == pytest.approx(40.0)  # 0.02 * 2000 mm


# ----------------------------------------------------------------- fitness


def test_violation_helpers():
    assert refine.bar_violation(0.5, 0.4, 0.8) == 0.0
    assert refine.bar_violation(0.3, 0.4, 0.8) == pytest.approx(0.25)
    assert refine.bar_violation(1.0, 0.4, 0.8) == pytest.approx(0.25)
    assert refine.thickness_violation(90.0, 50.0, 80.0, 45.0) == 0.0
    assert refine.thickness_violation(72.0, 50.0, 80.0, 45.0) == pytest.approx(0.1)
    assert refine.thickness_violation(72.0, 36.0, 80.0, 45.0) == pytest.approx(0.3)


def thick_spec(diameter=2.0, blades=4):
    """Constant design comfortably above the rule at a 1000 kW brief."""
    return PropellerSpec(constant_design(thickness=0.08), diameter, blades)


def test_fitness_zero_when_everything_met():
    spec = thick_spec()
    brief = brief_for(spec)
    target = target_condition(brief)

    def perfect(s, j):
        return target.kt_star, target.kq_star, 1.0

    assert refine.fitness(spec, brief, target, perfect) == pytest.approx(0.0)


def test_fitness_term_arithmetic():
    spec = thick_spec()
    brief = brief_for(spec)
    target = target_condition(brief)

    def off_thrust(s, j):
        return 1.2 * target.kt_star, target.kq_star, 1.0

    def over_torque(s, j):
        return target.kt_star, 1.5 * target.kq_star, 1.0

    def under_torque(s, j):
        return target.kt_star, 0.5 * target.kq_star, 1.0

    def low_eta(s, j):
        return target.kt_star, target.kq_star, 0.6

    w = refine.DEFAULT_WEIGHTS
    assert refine.fitness(spec, brief, target, off_thrust) == pytest.approx(0.2 * w[0])
    assert refine.fitness(spec, brief, target, over_torque) == pytest.approx(0.5 * w[1])
    assert refine.fitness(spec, brief, target, under_torque) == pytest.approx(0.0)
    assert refine.fitness(spec, brief, target, low_eta) == pytest.approx(0.4 * w[2])


def test_fitness_failure_paths():
    spec = thick_spec()
    brief = brief_for(spec)
    target = target_condition(brief)

    def broken(s, j):
        raise SolverError("no convergence")

    def nans(s, j):
        return math.nan, 0.03, 0.6

    assert refine.fitness(spec, brief, target, broken) == math.inf
    assert refine.fitness(spec, brief, target, nans) == math.inf
    bad = PropellerSpec(constant_design(pitch=-1.0), 2.0, 4)
    assert refine.fitness(bad, brief, target, lambda s, j: (0.2, 0.03, 0.6)) == math.inf


def test_penalty_ordering():
    # any hard-constraint violator must rank below any feasible design with
    # thrust error up to 50%
    spec = thick_spec()
    brief = brief_for(spec)
    target = target_condition(brief)

    def half_off(s, j):
        return 1.5 * target.kt_star, target.kq_star, 0.0

    feasible_worst = refine.fitness(spec, brief, target, half_off)
    thin = PropellerSpec(constant_design(thickness=0.005), 2.0, 4)

    def perfect(s, j):
        return target.kt_star, target.kq_star, 1.0

    violator_best = refine.fitness(thin, brief, target, perfect)
    assert violator_best > feasible_worst


# ------------------------------------------------------------------ cma-es


def sphere_around(x_star):
    return lambda x: float(np.sum((x - x_star) ** 2))


def test_cma_es_converges_on_small_sphere():
    x_star = np.array([0.3, -0.7, 1.1, 0.05])
    res = refine.cma_es_minimize(sphere_around(x_star), np.zeros(4), 0.5, 4000, seed=0)
    assert float(np.linalg.norm(res.x_best - x_star)) < 1e-6
    assert res.evaluations <= 4000


def test_cma_es_deterministic():
    x_star = np.full(6, 0.25)
    a = refine.cma_es_minimize(sphere_around(x_star), np.ones(6), 0.3, 2000, seed=9)
    b = refine.cma_es_minimize(sphere_around(x_star), np.ones(6), 0.3, 2000, seed=9)
    assert np.array_equal(a.x_best, b.x_best)
    assert a.history == b.history
    assert a.stop_reason == b.stop_reason


def test_cma_es_handles_nan_objective():
    x_star = np.zeros(4)

    def patchy(x):
        if x[0] > 0.4:
            return float("nan")
        return float(np.sum((x - x_star) ** 2))

    res = refine.cma_es_minimize(patchy, np.full(4, 0.3), 0.3, 4000, seed=3)
    assert math.isfinite(res.f_best)
    assert res.f_best < 1e-8


def test_cma_es_stops_early_on_flat_objective():
    res = refine.cma_es_minimize(lambda x: 1.0, np.zeros(5), 0.5, 100000, seed=1)
    assert res.stop_reason == "f_tol"
    assert res.evaluations < 100000


def test_cma_es_anisotropic_scales():
    x_star = np.array([200.0, 0.002])
    f = lambda x: float(((x[0] - 200.0) / 100.0) ** 2 + ((x[1] - 0.002) / 0.001) ** 2)
    res = refine.cma_es_minimize(
        f, np.array([0.0, 0.0]), 1.0, 6000, seed=4, scales=np.array([100.0, 0.001])
    )
    assert res.f_best < 1e-10
    assert abs(res.x_best[0] - 200.0) < 1e-3
    assert abs(res.x_best[1] - 0.002) < 1e-8


def test_cma_es_input_validation():
    with pytest.raises(ValueError):
        refine.cma_es_minimize(lambda x: 0.0, np.zeros(0), 0.5, 100, seed=0)
    with pytest.raises(ValueError):
        refine.cma_es_minimize(lambda x: 0.0, np.zeros(3), -0.5, 100, seed=0)
    with pytest.raises(ValueError):
        refine.cma_es_minimize(
            lambda x: 0.0, np.zeros(3), 0.5, 100, seed=0, scales=np.ones(2)
        )


# ------------------------------------------------------------------ refine


@pytest.fixture(scope="module")
def fleet_std():
    flats = np.array([flatten(r.design) for r in reference_designs(0)])
    return flats.std(axis=0, ddof=0)


def pitch_keyed_evaluator(target_kt):
    """Analytic stand-in: thrust responds to mean pitch, torque stays low."""

    def ev(spec, j):
        kt = 0.5 * float(np.mean(spec.design.pitch)) + (target_kt - 0.46)
        return kt, kt / 8.0, 0.65

    return ev


def test_refine_fixes_thin_blade(fleet_std):
    thin = dataclasses.replace(
        baseline_design(), max_thickness=baseline_design().max_thickness * 0.3
    )
    seed_spec = PropellerSpec(thin, 2.0, 4)
    brief = brief_for(seed_spec)
    target = target_condition(brief)
    ev = pitch_keyed_evaluator(target.kt_star)

    start = refine.extract_thickness_inputs(seed_spec, brief)
    mins = refine.min_thickness(start, refine.get_material(brief.material))
    assert start.t_25 < mins[0] or start.t_60 < mins[1]  # genuinely violating

    report = refine.refine([seed_spec], brief, ev, fleet_std, budget=4000, seed=0)
    assert len(report.results) == 1
    best = report.results[0]
    assert best.thickness_ok
    assert best.t_25 >= best.t_min_25 and best.t_60 >= best.t_min_60
    assert best.evaluations <= 4000
    # the search evaluator's thrust target is still met after thickening
    kt, _, _ = ev(best.spec, target.j_star)
    assert abs(kt - target.kt_star) / target.kt_star < 0.02
    assert best.spec.diameter_m == brief.diameter_m
    assert best.spec.blades == brief.blades


def test_refine_deterministic(fleet_std):
    spec = PropellerSpec(baseline_design(), 2.0, 4)
    brief = brief_for(spec)
    ev = pitch_keyed_evaluator(target_condition(brief).kt_star)
    a = refine.refine([spec], brief, ev, fleet_std, budget=1500, seed=5)
    b = refine.refine([spec], brief, ev, fleet_std, budget=1500, seed=5)
    assert np.array_equal(flatten(a.results[0].spec.design), flatten(b.results[0].spec.design))
    assert a.results[0].history == b.results[0].history


def test_refine_fixed_point_on_indifferent_objective(fleet_std):
    # when every candidate already scores 0 the run stops on the f window
    spec = thick_spec()
    brief = brief_for(spec)
    target = target_condition(brief)

    def indifferent(s, j):
        return target.kt_star, 0.5 * target.kq_star, 1.0

    report = refine.refine([spec], brief, indifferent, fleet_std, budget=50000, seed=2)
    res = report.results[0]
    assert res.fitness == pytest.approx(0.0, abs=1e-12)
    assert res.stop_reason == "f_tol"
    assert res.evaluations < 50000


def test_refine_report_best_prefers_feasible(fleet_std):
    spec = thick_spec()
    brief = brief_for(spec)
    ev = pitch_keyed_evaluator(target_condition(brief).kt_star)
    report = refine.refine([spec, spec], brief, ev, fleet_std, budget=1200, seed=3)
    best = report.best()
    assert best in report.results
    if any(r.feasible for r in report.results):
        assert best.feasible


def test_refine_validation(fleet_std):
    spec = thick_spec()
    brief = brief_for(spec)
    with pytest.raises(ValueError):
        refine.refine([], brief, lambda s, j: (0.1, 0.01, 0.5), fleet_std)
    with pytest.raises(ValueError):
        refine.refine([spec], brief, lambda s, j: (0.1, 0.01, 0.5), np.ones(10))
