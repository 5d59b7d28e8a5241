"""Open-water performance evaluation.

Two halves. The first is the operating-point algebra that turns a client
brief (speed, required thrust, shaft speed, available power) into
nondimensional targets J*, K_T*, K_Q* and the implied efficiency. The second
is a deterministic blade-element-momentum (BEM) solver that plays the role of
the external hydrodynamics oracle: given a blade geometry it produces
K_T(J), K_Q(J) and eta(J) open-water curves.

The solver is fully nondimensional (chord and pitch are stored as fractions
of D), so its output is exactly invariant to diameter, fluid density and
shaft speed at fixed advance ratio.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from propgen.geometry import RADIAL_GRID, PropellerSpec

RHO_SEAWATER = 1025.0

# Fixed-point settings for the induction-factor iteration.
RELAXATION = 0.3
TOLERANCE = 1e-6
MAX_ITERATIONS = 200

# Numerical guards: lift clamp, floor on sin(beta) inside the tip-loss
# exponent and the momentum denominators, and bounds on the induction
# factors so the damped iteration cannot run away in the deeply stalled
# or near-static regimes.
CL_LIMIT = 1.5
SIN_BETA_FLOOR = 1e-3
AXIAL_INDUCTION_RANGE = (-0.5, 5.0)
TANGENTIAL_INDUCTION_RANGE = (-0.5, 0.95)


class UndefinedEfficiencyError(ValueError):
    """Raised when efficiency is requested for a non-positive K_Q."""


class SolverError(RuntimeError):
    """Raised when the BEM iteration produces a non-finite quantity."""


@dataclass(frozen=True)
class OperatingPoint:
    """One sampled point of an open-water curve."""

    J: float
    kt: float
    kq: float
    eta: float
    converged: bool = True


@dataclass(frozen=True)
class OpenWaterCurve:
    """Ordered open-water samples for one propeller.

    J is strictly increasing and K_T changes sign at most once (the sweep
    stops at the first non-positive thrust point).
    """

    points: tuple

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if not self.points:
            raise ValueError("curve must contain at least one point")
        j = [p.J for p in self.points]
        if any(b <= a for a, b in zip(j, j[1:])):
            raise ValueError("J must be strictly increasing along a curve")
        positive = [p.kt > 0.0 for p in self.points]
        sign_changes = sum(1 for a, b in zip(positive, positive[1:]) if a != b)
        if sign_changes > 1:
            raise ValueError("K_T may change sign at most once along a curve")

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    @property
    def J(self) -> np.ndarray:
        return np.array([p.J for p in self.points])

    @property
    def kt(self) -> np.ndarray:
        return np.array([p.kt for p in self.points])

    @property
    def kq(self) -> np.ndarray:
        return np.array([p.kq for p in self.points])

    @property
    def eta(self) -> np.ndarray:
        return np.array([p.eta for p in self.points])

    @property
    def converged(self) -> np.ndarray:
        return np.array([p.converged for p in self.points])


@dataclass(frozen=True)
class DesignBrief:
    """Client-facing statement of the inverse problem.

    v_a in m/s, t_req in N, n in rev/s, p_avail in W, diameter in m.
    bar_min/bar_max bound the blade-area ratio as computed by
    geometry.blade_area_ratio; material names a row of refine.MATERIALS.
    """

    v_a: float
    t_req: float
    n: float
    p_avail: float
    diameter_m: float
    blades: int
    rho: float = RHO_SEAWATER
    bar_min: float = 0.1
    bar_max: float = 0.6
    material: str = "manganese bronze"

    def __post_init__(self):
        for name in ("v_a", "t_req", "n", "p_avail", "diameter_m", "rho", "bar_min"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        if self.blades not in (4, 5):
            raise ValueError(f"blades must be 4 or 5, got {self.blades}")
        if self.bar_min >= self.bar_max:
            raise ValueError("bar_min must be below bar_max")


@dataclass(frozen=True)
class TargetCondition:
    """Nondimensional design point implied by a brief."""

    j_star: float
    kt_star: float
    kq_star: float
    eta_star: float


def eta_from_coeffs(J: float, kt: float, kq: float) -> float:
    """Open-water efficiency eta = J/(2 pi) * K_T/K_Q. Requires K_Q > 0."""
    if kq <= 0.0:
        raise UndefinedEfficiencyError(f"K_Q must be positive, got {kq}")
    return J * kt / (2.0 * np.pi * kq)


def target_condition(brief: DesignBrief) -> TargetCondition:
    """Map a brief to its nondimensional targets.

    J* = V_A/(nD); K_T* = T_req/(rho n^2 D^4); K_Q* treats the full available
    power as the admissible torque budget, Q_max = P_avail/(2 pi n), so
    K_Q* = P_avail/(2 pi rho n^3 D^5). eta* is the efficiency implied by
    hitting thrust and torque targets simultaneously.
    """
    n, d, rho = brief.n, brief.diameter_m, brief.rho
    j_star = brief.v_a / (n * d)
    kt_star = brief.t_req / (rho * n**2 * d**4)
    kq_star = brief.p_avail / (2.0 * np.pi * rho * n**3 * d**5)
    return TargetCondition(
        j_star=j_star,
        kt_star=kt_star,
        kq_star=kq_star,
        eta_star=eta_from_coeffs(j_star, kt_star, kq_star),
    )


def _bem_coefficients(spec: PropellerSpec, j_values: np.ndarray):
    """Core solver: K_T, K_Q and convergence flags for a batch of J values.

    Per station the geometric pitch angle is phi = atan(P/D / (pi r)). The
    induction factors (a, a') start at zero and are iterated with damped
    fixed-point updates derived from equating blade-element loading with
    momentum-theory loading (Prandtl tip-loss factor F on the momentum
    side):

        a  <- sigma' Cx (1 + a) / (4 F sin^2 beta)
        a' <- sigma' Cy (1 - a') / (4 F sin beta cos beta)

    with sigma' = B c / (pi r), Cx = Cl cos beta - Cd sin beta and
    Cy = Cl sin beta + Cd cos beta. Each (J, station) cell freezes as soon
    as its own applied update drops below tolerance, so results are
    bit-identical whether points are evaluated singly or in a batch.

    The tip station carries F = 0 exactly; momentum balance there forces
    zero blade loading, so the tip is pinned at a = a' = 0 with a zero
    integrand (the Prandtl zero-tip-circulation limit) and is excluded from
    the iteration.
    """
    design = spec.design
    b = float(spec.blades)
    r = RADIAL_GRID[:-1]  # interior stations; tip handled by the zero-loading limit
    chord = design.chord[:-1]
    pitch = design.pitch[:-1]
    camber = design.max_camber[:-1]
    thickness = design.max_thickness[:-1]

    # Station-fixed quantities.
    phi = np.arctan2(pitch, np.pi * r)
    sigma = b * chord / (np.pi * r)
    tc_term = np.zeros_like(chord)
    has_chord = chord > 0.0
    tc_term[has_chord] = 60.0 * (thickness[has_chord] / chord[has_chord] - 0.06) ** 2

    j = np.asarray(j_values, dtype=np.float64).reshape(-1, 1)  # (nJ, 1)
    n_j = j.shape[0]
    n_s = r.shape[0]

    a = np.zeros((n_j, n_s))
    ap = np.zeros((n_j, n_s))
    active = np.ones((n_j, n_s), dtype=bool)

    for _ in range(MAX_ITERATIONS):
        beta = np.arctan2(j * (1.0 + a), np.pi * r * (1.0 - ap))
        sin_b = np.sin(beta)
        cos_b = np.cos(beta)
        alpha = phi - beta
        cl = np.clip(2.0 * np.pi * (alpha + 2.0 * camber), -CL_LIMIT, CL_LIMIT)
        cd = 0.008 * (1.0 + tc_term) + 0.01 * cl * cl
        sin_f = np.maximum(sin_b, SIN_BETA_FLOOR)
        tip_loss = (2.0 / np.pi) * np.arccos(
            np.exp(-b * (1.0 - r) / (2.0 * r * sin_f))
        )
        cx = cl * cos_b - cd * sin_b
        cy = cl * sin_b + cd * cos_b
        cos_f = np.maximum(cos_b, SIN_BETA_FLOOR)
        a_target = sigma * cx * (1.0 + a) / (4.0 * tip_loss * sin_f * sin_f)
        ap_target = sigma * cy * (1.0 - ap) / (4.0 * tip_loss * sin_f * cos_f)
        np.clip(a_target, *AXIAL_INDUCTION_RANGE, out=a_target)
        np.clip(ap_target, *TANGENTIAL_INDUCTION_RANGE, out=ap_target)

        da = RELAXATION * (a_target - a)
        dap = RELAXATION * (ap_target - ap)
        a = np.where(active, a + da, a)
        ap = np.where(active, ap + dap, ap)
        step = np.maximum(np.abs(da), np.abs(dap))
        active &= step >= TOLERANCE
        if not active.any():
            break

    if not (np.isfinite(a).all() and np.isfinite(ap).all()):
        raise SolverError("induction iteration produced non-finite values")

    # Final pass with the converged factors.
    beta = np.arctan2(j * (1.0 + a), np.pi * r * (1.0 - ap))
    sin_b = np.sin(beta)
    cos_b = np.cos(beta)
    cl = np.clip(2.0 * np.pi * (phi - beta + 2.0 * camber), -CL_LIMIT, CL_LIMIT)
    cd = 0.008 * (1.0 + tc_term) + 0.01 * cl * cl
    cx = cl * cos_b - cd * sin_b
    cy = cl * sin_b + cd * cos_b
    w2 = (j * (1.0 + a)) ** 2 + (np.pi * r * (1.0 - ap)) ** 2

    kt_integrand = np.zeros((n_j, n_s + 1))
    kq_integrand = np.zeros((n_j, n_s + 1))
    kt_integrand[:, :-1] = w2 * chord * cx
    kq_integrand[:, :-1] = w2 * chord * cy * r

    kt = (b / 4.0) * np.trapezoid(kt_integrand, RADIAL_GRID, axis=1)
    kq = (b / 8.0) * np.trapezoid(kq_integrand, RADIAL_GRID, axis=1)
    if not (np.isfinite(kt).all() and np.isfinite(kq).all()):
        raise SolverError("load integration produced non-finite coefficients")

    converged = ~active.any(axis=1)
    return kt, kq, converged


def _point_from_row(j: float, kt: float, kq: float, converged: bool) -> OperatingPoint:
    eta = eta_from_coeffs(j, kt, kq) if kq > 0.0 else 0.0
    return OperatingPoint(J=j, kt=kt, kq=kq, eta=eta, converged=bool(converged))


def evaluate_point(spec: PropellerSpec, j: float) -> OperatingPoint:
    """Evaluate one advance ratio. J must be nonnegative."""
    if j < 0.0:
        raise ValueError(f"advance ratio must be nonnegative, got {j}")
    kt, kq, conv = _bem_coefficients(spec, np.array([j]))
    return _point_from_row(float(j), float(kt[0]), float(kq[0]), bool(conv[0]))


def evaluate_points(spec: PropellerSpec, j_values: Sequence[float]) -> list:
    """Batch form of evaluate_point; bit-identical to evaluating singly."""
    j_arr = np.asarray(j_values, dtype=np.float64)
    if j_arr.ndim != 1:
        raise ValueError("j_values must be one-dimensional")
    if np.any(j_arr < 0.0):
        raise ValueError("advance ratios must be nonnegative")
    kt, kq, conv = _bem_coefficients(spec, j_arr)
    return [
        _point_from_row(float(jv), float(t), float(q), bool(c))
        for jv, t, q, c in zip(j_arr, kt, kq, conv)
    ]


def evaluate_curve(
    spec: PropellerSpec, j_min: float = 0.05, j_step: float = 0.05
) -> OpenWaterCurve:
    """Sweep J upward from j_min until K_T <= 0 or J = 2.0, whichever first.

    The first non-positive-thrust point is kept as the curve's endpoint.
    """
    if j_min <= 0.0 or j_step <= 0.0:
        raise ValueError("j_min and j_step must be positive")
    n_steps = int(np.floor((2.0 - j_min) / j_step + 1e-9))
    grid = j_min + j_step * np.arange(n_steps + 1)
    points = evaluate_points(spec, grid)
    cut = len(points)
    for i, p in enumerate(points):
        if p.kt <= 0.0:
            cut = i + 1
            break
    return OpenWaterCurve(points=tuple(points[:cut]))


def save_curve(path, curve: OpenWaterCurve) -> None:
    """Write a curve as CSV with columns J,KT,KQ,eta,converged."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["J", "KT", "KQ", "eta", "converged"])
        for p in curve:
            writer.writerow(
                [
                    repr(float(p.J)),
                    repr(float(p.kt)),
                    repr(float(p.kq)),
                    repr(float(p.eta)),
                    int(p.converged),
                ]
            )


def load_curve(path) -> OpenWaterCurve:
    """Read a curve written by save_curve."""
    path = Path(path)
    with path.open("r", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["J", "KT", "KQ", "eta", "converged"]:
            raise ValueError(f"{path}: unexpected curve header {header}")
        points = [
            OperatingPoint(
                J=float(row[0]),
                kt=float(row[1]),
                kq=float(row[2]),
                eta=float(row[3]),
                converged=bool(int(row[4])),
            )
            for row in reader
            if row
        ]
    return OpenWaterCurve(points=tuple(points))
