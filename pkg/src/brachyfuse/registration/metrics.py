"""Registration quality measures: residual surface distance and target
registration error."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from brachyfuse.errors import InputError
from brachyfuse.geometry.contours import SurfaceModel


@dataclass(frozen=True)
class DistanceStats:
    mean: float
    sd: float
    max: float
    n: int

    @classmethod
    def from_distances(cls, distances) -> "DistanceStats":
        d = np.asarray(distances, dtype=float).ravel()
        if len(d) == 0:
            raise InputError("no distances to summarize")
        return cls(
            mean=float(d.mean()),
            sd=float(d.std()),
            max=float(d.max()),
            n=len(d),
        )

    def as_dict(self) -> dict:
        return {"mean_mm": self.mean, "sd_mm": self.sd, "max_mm": self.max, "n": self.n}


def residual_surface_distance(transfer, source: SurfaceModel, target: SurfaceModel) -> DistanceStats:
    """Stats of exact distances from mapped source points to the nearest
    target sample. ``transfer`` is anything with an ``apply(points)``."""
    if len(source) == 0 or len(target) == 0:
        raise InputError("residual surface distance needs non-empty surfaces")
    moved = transfer.apply(source.points)
    d, _ = cKDTree(target.points).query(moved, k=1)
    return DistanceStats.from_distances(d)


def target_registration_error(transfer, source_landmarks, target_landmarks) -> DistanceStats:
    """Stats of |f(s_i) - t_i| over corresponding landmarks the
    registration never saw."""
    src = np.atleast_2d(np.asarray(source_landmarks, dtype=float))
    tgt = np.atleast_2d(np.asarray(target_landmarks, dtype=float))
    if len(src) != len(tgt):
        raise InputError(f"landmark count mismatch: {len(src)} vs {len(tgt)}")
    if len(src) == 0:
        raise InputError("no landmarks")
    moved = transfer.apply(src)
    return DistanceStats.from_distances(np.linalg.norm(moved - tgt, axis=1))
