"""Seed-implant dosimetry: point-source dose grids, DVH metrics and
plan constraint checks.

Dose model: point-source kernel with inverse-square falloff from a
reference distance of 10 mm, a tabulated radial dose function and a
scalar anisotropy factor. Cumulative permanent-implant dose = initial
dose rate times the source mean life (half-life / ln 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from brachyfuse.errors import InputError
from brachyfuse.geometry.contours import ContourStack, planimetric_volume
from brachyfuse.geometry.grid import GridSpec, StructureMask
from brachyfuse.geometry.voxelize import voxelize

DEFAULT_BIN_WIDTH_GY = 0.8  # 0.5% of the 160 Gy target dose
DEFAULT_LAMBDA_CGY_H_U = 0.965
DEFAULT_HALF_LIFE_DAYS = 59.4
DEFAULT_ANISOTROPY = 0.93
R_REFERENCE_MM = 10.0
R_MIN_MM = 0.5


def _load_default_g_table() -> np.ndarray:
    text = (
        resources.files("brachyfuse.data")
        .joinpath("i125_radial_dose.csv")
        .read_text()
    )
    rows = [
        [float(tok) for tok in line.split(",")]
        for line in text.splitlines()
        if line.strip() and not line.startswith("#")
    ]
    return np.asarray(rows, dtype=float)


@dataclass(frozen=True)
class SourceModel:
    """Radionuclide dose kernel parameters (all configurable)."""

    radionuclide: str = "I-125"
    lambda_cgy_per_h_per_u: float = DEFAULT_LAMBDA_CGY_H_U
    half_life_days: float = DEFAULT_HALF_LIFE_DAYS
    r0_mm: float = R_REFERENCE_MM
    r_min_mm: float = R_MIN_MM
    g_table: Optional[np.ndarray] = field(default=None, repr=False)
    phi: Union[float, np.ndarray] = DEFAULT_ANISOTROPY

    def __post_init__(self):
        if self.lambda_cgy_per_h_per_u <= 0:
            raise InputError("dose-rate constant must be positive")
        if self.half_life_days <= 0:
            raise InputError("half-life must be positive")
        g = self.g_table
        if g is None:
            g = _load_default_g_table()
        g = np.asarray(g, dtype=float)
        if g.ndim != 2 or g.shape[1] != 2 or len(g) < 2:
            raise InputError("g_table must be (n, 2) pairs of (r_mm, value)")
        if np.any(np.diff(g[:, 0]) <= 0):
            raise InputError("g_table radii must be strictly increasing")
        g0 = float(np.interp(self.r0_mm, g[:, 0], g[:, 1]))
        if abs(g0 - 1.0) > 1e-6:
            raise InputError(f"g(r0) must be 1, got {g0}")
        g.flags.writeable = False
        object.__setattr__(self, "g_table", g)
        if isinstance(self.phi, np.ndarray) or (
            not np.isscalar(self.phi) and hasattr(self.phi, "__len__")
        ):
            phi = np.asarray(self.phi, dtype=float)
            if phi.ndim != 2 or phi.shape[1] != 2:
                raise InputError("tabulated phi must be (n, 2) pairs")
            phi.flags.writeable = False
            object.__setattr__(self, "phi", phi)

    @property
    def mean_life_hours(self) -> float:
        return self.half_life_days * 24.0 / math.log(2.0)

    def g(self, r_mm) -> np.ndarray:
        return np.interp(r_mm, self.g_table[:, 0], self.g_table[:, 1])

    def anisotropy(self, r_mm) -> np.ndarray:
        if isinstance(self.phi, np.ndarray):
            return np.interp(r_mm, self.phi[:, 0], self.phi[:, 1])
        return np.full_like(np.asarray(r_mm, dtype=float), float(self.phi))

    def initial_rate_cgy_per_h(self, r_mm, sk_u: float) -> np.ndarray:
        """Initial dose rate at distance r from one seed of strength sk."""
        r = np.maximum(np.asarray(r_mm, dtype=float), self.r_min_mm)
        return sk_u * self.lambda_cgy_per_h_per_u * (self.r0_mm / r) ** 2 * self.g(
            r
        ) * self.anisotropy(r)

    def cumulative_dose_gy(self, r_mm, sk_u: float) -> np.ndarray:
        return self.initial_rate_cgy_per_h(r_mm, sk_u) * self.mean_life_hours / 100.0


@dataclass(frozen=True)
class Seed:
    position: np.ndarray
    sk_u: float

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(pos)):
            raise InputError("seed position must be finite")
        if self.sk_u <= 0:
            raise InputError("air-kerma strength must be positive")
        pos.flags.writeable = False
        object.__setattr__(self, "position", pos)


@dataclass(frozen=True)
class SeedPlan:
    plan_id: str
    seeds: tuple
    source: SourceModel

    def __init__(self, plan_id, seeds, source=None):
        seeds = tuple(seeds)
        if not seeds:
            raise InputError("plan needs at least one seed")
        object.__setattr__(self, "plan_id", str(plan_id))
        object.__setattr__(self, "seeds", seeds)
        object.__setattr__(self, "source", source if source is not None else SourceModel())


@dataclass(frozen=True)
class DoseGrid:
    grid: GridSpec
    dose_gy: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.dose_gy, dtype=float)
        if arr.shape != self.grid.dims:
            raise InputError(f"dose shape {arr.shape} != grid dims {self.grid.dims}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise InputError("doses must be finite and non-negative")
        arr.flags.writeable = False
        object.__setattr__(self, "dose_gy", arr)


def dose_at_points(plan: SeedPlan, points: np.ndarray) -> np.ndarray:
    """Cumulative dose (Gy) at arbitrary points; seeds summed in index order."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    total = np.zeros(len(pts))
    for seed in plan.seeds:  # fixed order keeps float sums bit-stable
        r = np.linalg.norm(pts - seed.position, axis=1)
        total += plan.source.cumulative_dose_gy(r, seed.sk_u)
    return total


def compute_dose_grid(plan: SeedPlan, grid: GridSpec) -> DoseGrid:
    centers = grid.voxel_centers().reshape(-1, 3)
    dose = dose_at_points(plan, centers).reshape(grid.dims)
    return DoseGrid(grid=grid, dose_gy=dose)


@dataclass(frozen=True)
class DVHCurve:
    """Cumulative dose-volume curve of one structure.

    ``member_doses`` keeps the exact per-voxel doses (ascending) so that
    order-statistic queries do not suffer binning error.
    """

    structure_name: str
    total_volume_cc: float
    bin_width_gy: float
    dose_edges_gy: np.ndarray = field(repr=False)
    fraction_pct: np.ndarray = field(repr=False)
    member_doses: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("dose_edges_gy", "fraction_pct", "member_doses"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.fraction_pct[0] != 100.0:
            raise InputError("DVH must start at 100% for dose 0")
        if np.any(np.diff(self.fraction_pct) > 1e-12):
            raise InputError("DVH fractions must be non-increasing")


def compute_dvh(
    dose: DoseGrid, mask: StructureMask, bin_width_gy: float = DEFAULT_BIN_WIDTH_GY
) -> DVHCurve:
    if dose.grid != mask.grid:
        raise InputError("dose grid and mask must share the same grid spec")
    if bin_width_gy <= 0:
        raise InputError("bin width must be positive")
    member = np.sort(dose.dose_gy[mask.inside])
    n = len(member)
    if n == 0:
        raise InputError(f"mask {mask.structure_name!r} selects no voxels")
    n_bins = int(math.floor(member[-1] / bin_width_gy)) + 2
    edges = bin_width_gy * np.arange(n_bins, dtype=float)
    # voxels with dose >= edge, by binary search on the sorted member doses
    fraction = 100.0 * (n - np.searchsorted(member, edges, side="left")) / n
    return DVHCurve(
        structure_name=mask.structure_name,
        total_volume_cc=n * mask.grid.voxel_volume_mm3 / 1000.0,
        bin_width_gy=bin_width_gy,
        dose_edges_gy=edges,
        fraction_pct=fraction,
        member_doses=member,
    )


class DoseAtVolume(NamedTuple):
    dose_gy: float
    fraction_pct: float  # fraction actually achieved at the reported dose


class VolumeAtDose(NamedTuple):
    fraction_pct: float
    cc: float


def dose_at_volume(dvh: DVHCurve, q: float, mode: str = "exact") -> DoseAtVolume:
    """Largest dose still covering at least q% of the structure (D_q).

    Modes: "exact" evaluates the unbinned empirical curve (order
    statistic); "interp" interpolates linearly on the binned curve;
    "nearest_bin" returns the bin edge whose achieved fraction is closest
    to q (ties to the higher dose), the form used for clinical
    dose-with-achieved-percentage reporting.
    """
    if not 0.0 < q <= 100.0:
        raise InputError(f"volume fraction must be in (0, 100], got {q}")
    member = dvh.member_doses
    n = len(member)
    if mode == "exact":
        k = int(math.ceil(q * n / 100.0))  # need k voxels at or above d
        d = float(member[n - k])
        achieved = 100.0 * (n - np.searchsorted(member, d, side="left")) / n
        return DoseAtVolume(d, float(achieved))
    if mode == "nearest_bin":
        gap = np.abs(dvh.fraction_pct - q)
        idx = len(gap) - 1 - int(np.argmin(gap[::-1]))
        return DoseAtVolume(float(dvh.dose_edges_gy[idx]), float(dvh.fraction_pct[idx]))
    if mode == "interp":
        f = dvh.fraction_pct
        above = np.nonzero(f >= q)[0]
        i = int(above[-1])
        if i == len(f) - 1 or f[i] == q:
            return DoseAtVolume(float(dvh.dose_edges_gy[i]), float(f[i]))
        t = (f[i] - q) / (f[i] - f[i + 1])
        d = dvh.dose_edges_gy[i] + t * dvh.bin_width_gy
        return DoseAtVolume(float(d), float(q))
    raise InputError(f"unknown dose_at_volume mode {mode!r}")


def volume_at_dose(dvh: DVHCurve, d: float) -> VolumeAtDose:
    """Fraction and absolute volume receiving at least d Gy (binned curve)."""
    if d < 0:
        raise InputError("dose must be non-negative")
    fraction = float(np.interp(d, dvh.dose_edges_gy, dvh.fraction_pct))
    return VolumeAtDose(fraction, fraction * dvh.total_volume_cc / 100.0)


@dataclass(frozen=True)
class ConstraintCheck:
    name: str
    measured: Optional[float]
    limit: str
    passed: bool
    evaluated: bool = True

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "measured": self.measured,
            "limit": self.limit,
            "passed": self.passed,
            "evaluated": self.evaluated,
        }


@dataclass(frozen=True)
class ConstraintReport:
    checks: tuple

    @property
    def overall_pass(self) -> bool:
        return all(c.evaluated and c.passed for c in self.checks)

    def as_dict(self) -> dict:
        return {
            "overall_pass": self.overall_pass,
            "checks": [c.as_dict() for c in self.checks],
        }


_EPS = 1e-9


def check_constraints(
    prostate_dvh: Optional[DVHCurve],
    urethra_dvh: Optional[DVHCurve] = None,
    rectum_dvh: Optional[DVHCurve] = None,
) -> ConstraintReport:
    """Plan acceptability: prostate D90 in [160, 180] Gy; at most 70% of
    the urethra at or above 240 Gy; at most 1.3 cc of rectum at or above
    160 Gy; at most 10% of rectum at or above 80 Gy."""
    checks = []

    if prostate_dvh is not None:
        d90 = dose_at_volume(prostate_dvh, 90.0).dose_gy
        checks.append(
            ConstraintCheck(
                "prostate_d90_range",
                d90,
                "160 <= D90 <= 180 Gy",
                160.0 - _EPS <= d90 <= 180.0 + _EPS,
            )
        )
    else:
        checks.append(
            ConstraintCheck("prostate_d90_range", None, "160 <= D90 <= 180 Gy", False, False)
        )

    if urethra_dvh is not None:
        v240 = volume_at_dose(urethra_dvh, 240.0).fraction_pct
        checks.append(
            ConstraintCheck("urethra_v240_pct", v240, "V240 <= 70 %", v240 <= 70.0 + _EPS)
        )
    else:
        checks.append(ConstraintCheck("urethra_v240_pct", None, "V240 <= 70 %", False, False))

    if rectum_dvh is not None:
        v160cc = volume_at_dose(rectum_dvh, 160.0).cc
        checks.append(
            ConstraintCheck("rectum_v160_cc", v160cc, "V160 <= 1.3 cc", v160cc <= 1.3 + _EPS)
        )
        v80 = volume_at_dose(rectum_dvh, 80.0).fraction_pct
        checks.append(
            ConstraintCheck("rectum_v80_pct", v80, "V80 <= 10 %", v80 <= 10.0 + _EPS)
        )
    else:
        checks.append(ConstraintCheck("rectum_v160_cc", None, "V160 <= 1.3 cc", False, False))
        checks.append(ConstraintCheck("rectum_v80_pct", None, "V80 <= 10 %", False, False))

    return ConstraintReport(checks=tuple(checks))


@dataclass(frozen=True)
class PairedEvaluation:
    """One paired measurement row: original vs revised structure set."""

    patient_id: str
    metric: str
    us_value: float
    fused_value: float
    diff: float
    percent: float

    @classmethod
    def from_values(
        cls, patient_id: str, metric: str, us_value: float, fused_value: float
    ) -> "PairedEvaluation":
        if us_value == 0.0:
            raise InputError("reference value must be nonzero for percent column")
        diff = fused_value - us_value
        return cls(
            patient_id=str(patient_id),
            metric=metric,
            us_value=float(us_value),
            fused_value=float(fused_value),
            diff=float(diff),
            percent=float(100.0 * diff / us_value),
        )

    def as_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "metric": self.metric,
            "us_value": self.us_value,
            "fused_value": self.fused_value,
            "diff": self.diff,
            "percent": self.percent,
        }


def compare_structures(
    us_structures: dict,
    fused_structures: dict,
    plan: SeedPlan,
    grid: GridSpec,
    patient_id: str = "",
    bin_width_gy: float = DEFAULT_BIN_WIDTH_GY,
) -> list:
    """Evaluate one fixed plan against two prostate definitions.

    ``us_structures`` / ``fused_structures`` map structure name to
    ContourStack and must both contain "prostate". Returns paired rows
    for volume (cc), V160 (%), and D90 (Gy).
    """
    for label, structs in (("us", us_structures), ("fused", fused_structures)):
        if "prostate" not in structs:
            raise InputError(f"{label} structure set lacks a prostate stack")

    dose = compute_dose_grid(plan, grid)

    def metrics(stack: ContourStack):
        vol = planimetric_volume(stack)
        dvh = compute_dvh(dose, voxelize(stack, grid), bin_width_gy)
        v160 = volume_at_dose(dvh, 160.0).fraction_pct
        d90 = dose_at_volume(dvh, 90.0).dose_gy
        return vol, v160, d90

    us_vol, us_v160, us_d90 = metrics(us_structures["prostate"])
    f_vol, f_v160, f_d90 = metrics(fused_structures["prostate"])

    return [
        PairedEvaluation.from_values(patient_id, "volume_cc", us_vol, f_vol),
        PairedEvaluation.from_values(patient_id, "v160_pct", us_v160, f_v160),
        PairedEvaluation.from_values(patient_id, "d90_gy", us_d90, f_d90),
    ]
