"""Blade geometry parameterization.

A propeller blade is described by six radial distributions sampled on a fixed
grid of 27 stations from the hub (r/R = 0.2) to the tip (r/R = 1.0). All
length-like quantities are stored nondimensionally: chord, rake, maximum
thickness and pitch as fractions of the diameter (pitch is the usual P/D),
maximum camber as a fraction of the local chord, skew in degrees. Stacking
the six distributions gives a flat 162-dimensional design vector that every
model in the package operates on.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

N_STATIONS = 27

# Nondimensional radial stations r/R, hub boss at 0.2.
RADIAL_GRID = np.linspace(0.2, 1.0, N_STATIONS)
RADIAL_GRID.setflags(write=False)

# Flattening order of the six distributions. Index into the 162-vector is
# 27 * feature_index + station_index.
FEATURES = ("chord", "skew", "max_thickness", "rake", "pitch", "max_camber")

DESIGN_DIM = N_STATIONS * len(FEATURES)

# is_physical bound on |camber| (camber-to-chord ratio).
MAX_CAMBER_RATIO = 0.2


def _as_station_array(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (N_STATIONS,):
        raise ValueError(f"expected {N_STATIONS} stations, got shape {arr.shape}")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DesignVector:
    """Six radial distributions on the shared 27-station grid.

    chord, max_thickness, rake and pitch are fractions of diameter;
    max_camber is a fraction of local chord; skew is in degrees. Arrays are
    copied on construction and marked read-only, so instances are safe to
    share across threads.
    """

    chord: np.ndarray
    skew: np.ndarray
    max_thickness: np.ndarray
    rake: np.ndarray
    pitch: np.ndarray
    max_camber: np.ndarray

    def __post_init__(self):
        for name in FEATURES:
            object.__setattr__(self, name, _as_station_array(getattr(self, name)))

    @classmethod
    def zeros(cls) -> "DesignVector":
        z = np.zeros(N_STATIONS)
        return cls(z, z, z, z, z, z)

    def feature(self, name: str) -> np.ndarray:
        if name not in FEATURES:
            raise KeyError(f"unknown feature {name!r}, expected one of {FEATURES}")
        return getattr(self, name)


@dataclass(frozen=True)
class PropellerSpec:
    """A design vector plus the two global parameters: diameter and blade count."""

    design: DesignVector
    diameter_m: float
    blades: int

    def __post_init__(self):
        if not (0.1 <= self.diameter_m <= 10.0):
            raise ValueError(f"diameter_m {self.diameter_m} outside [0.1, 10.0]")
        if self.blades not in (4, 5):
            raise ValueError(f"blades must be 4 or 5, got {self.blades}")


def flatten(design: DesignVector) -> np.ndarray:
    """Stack the six distributions into one 162-vector (chord first, camber last)."""
    return np.concatenate([design.feature(name) for name in FEATURES])


def unflatten(vector) -> DesignVector:
    """Inverse of flatten."""
    vec = np.asarray(vector, dtype=np.float64)
    if vec.shape != (DESIGN_DIM,):
        raise ValueError(f"expected shape ({DESIGN_DIM},), got {vec.shape}")
    parts = {
        name: vec[i * N_STATIONS : (i + 1) * N_STATIONS]
        for i, name in enumerate(FEATURES)
    }
    return DesignVector(**parts)


def interp_feature(design: DesignVector, feature: str, r_norm: float) -> float:
    """Piecewise-linear interpolation of one distribution at radius r/R.

    Exact at grid stations. Raises for r/R outside [0.2, 1.0].
    """
    if not (RADIAL_GRID[0] <= r_norm <= RADIAL_GRID[-1]):
        raise ValueError(
            f"r/R = {r_norm} outside [{RADIAL_GRID[0]}, {RADIAL_GRID[-1]}]"
        )
    return float(np.interp(r_norm, RADIAL_GRID, design.feature(feature)))


def blade_area_ratio(spec: PropellerSpec) -> float:
    """Expanded-area approximation B * integral of c(r/R) dr/R over pi.

    Chord is stored as a fraction of D, so the ratio is independent of
    diameter and exactly linear in blade count.
    """
    return spec.blades * float(np.trapezoid(spec.design.chord, RADIAL_GRID)) / np.pi


def is_physical(design: DesignVector) -> bool:
    """Cheap plausibility screen used by dataset generation and the generators.

    Interior chord must be strictly positive (the tip may close to zero),
    thickness and pitch strictly positive everywhere, camber ratio below 0.2
    in magnitude.
    """
    c = design.chord
    if not np.all(c[:-1] > 0.0) or c[-1] < 0.0:
        return False
    if not np.all(design.max_thickness > 0.0):
        return False
    if not np.all(design.pitch > 0.0):
        return False
    if not np.all(np.abs(design.max_camber) < MAX_CAMBER_RATIO):
        return False
    return True


def save_design(path, design: DesignVector) -> None:
    """Write a design as long-format CSV: feature,station,value."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "station", "value"])
        for name in FEATURES:
            values = design.feature(name)
            for i in range(N_STATIONS):
                writer.writerow([name, i, repr(float(values[i]))])


def load_design(path) -> DesignVector:
    """Read a design from CSV.

    Accepts either the long format written by save_design (header
    feature,station,value) or a single comma-separated row of 162 values in
    flattening order.
    """
    path = Path(path)
    with path.open("r", newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise ValueError(f"{path}: empty design file")

    first = [cell.strip() for cell in rows[0]]
    if first[:3] == ["feature", "station", "value"]:
        arrays = {name: np.full(N_STATIONS, np.nan) for name in FEATURES}
        for row in rows[1:]:
            name, station, value = row[0].strip(), int(row[1]), float(row[2])
            if name not in arrays:
                raise ValueError(f"{path}: unknown feature {name!r}")
            arrays[name][station] = value
        for name, arr in arrays.items():
            if np.any(np.isnan(arr)):
                raise ValueError(f"{path}: missing stations for feature {name!r}")
        return DesignVector(**arrays)

    if len(rows) == 1 and len(first) == DESIGN_DIM:
        return unflatten(np.array([float(v) for v in first]))

    raise ValueError(
        f"{path}: expected long format (feature,station,value) or a single "
        f"row of {DESIGN_DIM} values"
    )
