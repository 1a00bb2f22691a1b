"""Hierarchical octree-spline free-form deformation and the composed
transfer function.

Level k carries a full trilinear lattice of (2^k + 1)^3 control-point
displacements over the root cell; the total displacement at a point is
the sum of all level interpolations. Adaptivity comes from the
refinement masks: only control points under subdivided parent cells are
released to the optimizer, everything else stays pinned at zero, so each
level's field is globally C0-continuous by construction. Points outside
the root cell evaluate with coordinates clamped to the boundary
(constant displacement continuation).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from brachyfuse.errors import InputError, InversionError
from brachyfuse.geometry.interp import clamped_corner_and_frac, trilinear_fractional
from brachyfuse.registration.rigid import RigidTransform

TRANSFER_FORMAT_VERSION = "1"

_CORNER_OFFSETS = np.array(
    [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1], [1, 0, 1], [0, 1, 1], [1, 1, 1]],
    dtype=int,
)


@dataclass(frozen=True)
class LatticeLevel:
    """One lattice of the hierarchy: 2^level cells per axis."""

    level: int
    displacements: np.ndarray = field(repr=False)  # (n, n, n, 3)
    active: np.ndarray = field(repr=False)  # (n, n, n) optimizable control points
    cells_refined: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        n = 2**self.level + 1
        disp = np.ascontiguousarray(self.displacements, dtype=float)
        act = np.ascontiguousarray(self.active, dtype=bool)
        if disp.shape != (n, n, n, 3):
            raise InputError(f"level {self.level} displacements must be {(n, n, n, 3)}")
        if act.shape != (n, n, n):
            raise InputError(f"level {self.level} active mask must be {(n, n, n)}")
        if not np.all(np.isfinite(disp)):
            raise InputError("control displacements must be finite")
        if np.any(np.abs(disp[~act]) > 0):
            raise InputError("inactive control points must carry zero displacement")
        refined = self.cells_refined
        if refined is not None:
            refined = np.ascontiguousarray(refined, dtype=bool)
            nc = 2**self.level
            if refined.shape != (nc, nc, nc):
                raise InputError(f"cells_refined must be {(nc, nc, nc)}")
            refined.flags.writeable = False
        disp.flags.writeable = False
        act.flags.writeable = False
        object.__setattr__(self, "displacements", disp)
        object.__setattr__(self, "active", act)
        object.__setattr__(self, "cells_refined", refined)

    @property
    def points_per_axis(self) -> int:
        return 2**self.level + 1


def _zero_level(level: int, active: np.ndarray = None) -> LatticeLevel:
    n = 2**level + 1
    if active is None:
        active = np.ones((n, n, n), dtype=bool)
    return LatticeLevel(level, np.zeros((n, n, n, 3)), active)


@dataclass(frozen=True)
class OctreeSplineFFD:
    root_lo: np.ndarray = field(repr=False)
    root_hi: np.ndarray = field(repr=False)
    levels: tuple = ()

    def __post_init__(self):
        lo = np.ascontiguousarray(self.root_lo, dtype=float).reshape(3)
        hi = np.ascontiguousarray(self.root_hi, dtype=float).reshape(3)
        if np.any(hi <= lo):
            raise InputError("root cell must have positive extent")
        levels = tuple(self.levels)
        if not levels:
            levels = (_zero_level(0),)
        for expected, lev in enumerate(levels):
            if lev.level != expected:
                raise InputError("levels must be consecutive starting at 0")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "root_lo", lo)
        object.__setattr__(self, "root_hi", hi)
        object.__setattr__(self, "levels", levels)

    @classmethod
    def identity(cls, root_lo, root_hi, levels: int = 1) -> "OctreeSplineFFD":
        return cls(root_lo, root_hi, tuple(_zero_level(k) for k in range(levels)))

    def _normalized(self, points: np.ndarray) -> np.ndarray:
        u = (points - self.root_lo) / (self.root_hi - self.root_lo)
        return np.clip(u, 0.0, 1.0)

    def displacement(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        u = self._normalized(pts)
        total = np.zeros_like(pts)
        for lev in self.levels:
            ncells = 2**lev.level
            i0, frac = clamped_corner_and_frac(u * ncells, (ncells + 1,) * 3)
            for axis in range(3):
                total[:, axis] += trilinear_fractional(
                    lev.displacements[..., axis], i0, frac
                )
        return total

    def interpolation_weights(self, level_index: int, points: np.ndarray):
        """Per-point trilinear footprint on one level's lattice.

        Returns (corner_flat_index (N, 8), weight (N, 8)); weights depend
        only on point positions, never on displacement values.
        """
        lev = self.levels[level_index]
        n = lev.points_per_axis
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        u = self._normalized(pts)
        i0, frac = clamped_corner_and_frac(u * (n - 1), (n,) * 3)
        w1 = [1.0 - frac[:, a] for a in range(3)]
        w2 = [frac[:, a] for a in range(3)]
        idx = np.empty((len(pts), 8), dtype=int)
        wgt = np.empty((len(pts), 8))
        for c, (ox, oy, oz) in enumerate(_CORNER_OFFSETS):
            idx[:, c] = np.ravel_multi_index(
                (i0[:, 0] + ox, i0[:, 1] + oy, i0[:, 2] + oz), (n, n, n)
            )
            wgt[:, c] = (w2[0] if ox else w1[0]) * (w2[1] if oy else w1[1]) * (
                w2[2] if oz else w1[2]
            )
        return idx, wgt

    def max_displacement(self) -> float:
        peak = 0.0
        for lev in self.levels:
            norms = np.linalg.norm(lev.displacements.reshape(-1, 3), axis=1)
            if len(norms):
                peak = max(peak, float(norms.max()))
        return peak

    def with_level(self, new_level: LatticeLevel) -> "OctreeSplineFFD":
        levels = list(self.levels)
        if new_level.level == len(levels):
            levels.append(new_level)
        elif new_level.level < len(levels):
            levels[new_level.level] = new_level
        else:
            raise InputError("levels must be added consecutively")
        return OctreeSplineFFD(self.root_lo, self.root_hi, tuple(levels))


def active_points_for_children(parent_refined: np.ndarray) -> np.ndarray:
    """Active mask for level k+1 control points given refined level-k cells.

    A refined parent cell releases the 3x3x3 block of child control
    points spanning its volume.
    """
    nc = parent_refined.shape[0]
    n_child = 2 * nc + 1
    active = np.zeros((n_child, n_child, n_child), dtype=bool)
    for i, j, m in zip(*np.nonzero(parent_refined)):
        active[2 * i : 2 * i + 3, 2 * j : 2 * j + 3, 2 * m : 2 * m + 3] = True
    return active


@dataclass(frozen=True)
class TransferFunction:
    """Composite mapping source frame -> target frame: ffd(rigid(p))."""

    rigid: RigidTransform
    ffd: OctreeSplineFFD
    source_frame: str = "TRUS"
    target_frame: str = "MRI"

    @classmethod
    def identity(cls, root_lo=(-100.0, -100.0, -100.0), root_hi=(100.0, 100.0, 100.0)):
        return cls(RigidTransform.identity(), OctreeSplineFFD.identity(root_lo, root_hi))

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        q = self.rigid.apply(np.atleast_2d(pts))
        out = q + self.ffd.displacement(q)
        return out[0] if single else out

    def invert_points(
        self, targets, tol_mm: float = 0.01, max_iter: int = 100
    ) -> tuple[np.ndarray, np.ndarray]:
        """Damped Newton inversion of a batch of target-frame points.

        Returns (source points, converged mask); non-converged entries
        hold the best iterate found.
        """
        q = np.atleast_2d(np.asarray(targets, dtype=float))
        x = self.rigid.inverse().apply(q)
        f = self.apply(x) - q
        h = 1e-3

        for _ in range(max_iter):
            res = np.linalg.norm(f, axis=1)
            live = res > tol_mm
            if not live.any():
                break
            xa = x[live]
            fa = f[live]
            base = res[live]
            jac = np.empty((len(xa), 3, 3))
            fx = self.apply(xa)
            for a in range(3):
                bump = xa.copy()
                bump[:, a] += h
                jac[:, :, a] = (self.apply(bump) - fx) / h
            try:
                step = np.linalg.solve(jac, -fa[..., None])[..., 0]
            except np.linalg.LinAlgError:
                step = -fa
            alpha = np.ones(len(xa))
            trial = xa + step
            ft = self.apply(trial) - q[live]
            rt = np.linalg.norm(ft, axis=1)
            for _ in range(6):
                worse = rt >= base
                if not worse.any():
                    break
                alpha[worse] *= 0.5
                trial[worse] = xa[worse] + alpha[worse, None] * step[worse]
                ft[worse] = self.apply(trial[worse]) - q[live][worse]
                rt[worse] = np.linalg.norm(ft[worse], axis=1)
            accept = rt < base
            xa[accept] = trial[accept]
            fa[accept] = ft[accept]
            x[live] = xa
            f[live] = fa
            if not accept.any():
                break  # stalled everywhere that still matters

        ok = np.linalg.norm(f, axis=1) <= tol_mm
        return x, ok

    def invert_point(self, target, tol_mm: float = 0.01, max_iter: int = 100) -> np.ndarray:
        pts, ok = self.invert_points(np.asarray(target, dtype=float)[None, :], tol_mm, max_iter)
        if not ok[0]:
            residual = float(np.linalg.norm(self.apply(pts[0]) - np.asarray(target)))
            raise InversionError(
                f"inversion stalled at residual {residual:.4g} mm (tol {tol_mm})",
                best_point=pts[0],
                best_residual=residual,
            )
        return pts[0]

    def to_dict(self) -> dict:
        return {
            "version": TRANSFER_FORMAT_VERSION,
            "source_frame": self.source_frame,
            "target_frame": self.target_frame,
            "rigid": {
                "rotation": self.rigid.rotation.tolist(),
                "translation": self.rigid.translation.tolist(),
            },
            "ffd": {
                "root_lo": self.ffd.root_lo.tolist(),
                "root_hi": self.ffd.root_hi.tolist(),
                "levels": [
                    {
                        "level": lev.level,
                        "displacements": lev.displacements.ravel().tolist(),
                        "active": lev.active.ravel().astype(int).tolist(),
                        "cells_refined": (
                            lev.cells_refined.ravel().astype(int).tolist()
                            if lev.cells_refined is not None
                            else None
                        ),
                    }
                    for lev in self.ffd.levels
                ],
            },
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "TransferFunction":
        if "version" not in payload:
            raise InputError("transfer payload lacks mandatory version field")
        if payload["version"] != TRANSFER_FORMAT_VERSION:
            raise InputError(f"unsupported transfer version {payload['version']!r}")
        rigid = RigidTransform(
            np.asarray(payload["rigid"]["rotation"], dtype=float),
            np.asarray(payload["rigid"]["translation"], dtype=float),
        )
        fd = payload["ffd"]
        levels = []
        for entry in fd["levels"]:
            k = int(entry["level"])
            n = 2**k + 1
            disp = np.asarray(entry["displacements"], dtype=float).reshape(n, n, n, 3)
            act = np.asarray(entry["active"], dtype=bool).reshape(n, n, n)
            refined = entry.get("cells_refined")
            if refined is not None:
                nc = 2**k
                refined = np.asarray(refined, dtype=bool).reshape(nc, nc, nc)
            levels.append(LatticeLevel(k, disp, act, refined))
        ffd = OctreeSplineFFD(
            np.asarray(fd["root_lo"], dtype=float),
            np.asarray(fd["root_hi"], dtype=float),
            tuple(levels),
        )
        return cls(
            rigid=rigid,
            ffd=ffd,
            source_frame=payload.get("source_frame", "TRUS"),
            target_frame=payload.get("target_frame", "MRI"),
        )
