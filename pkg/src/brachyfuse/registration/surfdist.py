"""Point-to-surface distance with gradient, backing the registration cost.

A precomputed distance field gives cheap trilinear distance/gradient
lookups away from the surface; within ``near_surface_mm`` (where the
field's linear interpolation error matters most) and outside the field's
grid, the query falls back to exact nearest-neighbor distance with the
unit offset vector as gradient.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from brachyfuse.errors import InputError
from brachyfuse.geometry.contours import SurfaceModel
from brachyfuse.geometry.distance_field import build_distance_field
from brachyfuse.geometry.grid import GridSpec
from brachyfuse.registration.config import RegistrationConfig


class SurfaceDistance:
    """Distance-to-target queries shared by the rigid and elastic stages."""

    def __init__(self, target: SurfaceModel, config: RegistrationConfig = RegistrationConfig()):
        if len(target) == 0:
            raise InputError("target surface is empty")
        self.target = target
        self.config = config
        self._tree = cKDTree(target.points)
        lo, hi = target.bounds()
        grid = GridSpec.from_bounds(lo, hi, config.field_spacing_mm, pad=config.field_padding_mm)
        self._field = build_distance_field(target, grid)

    def _exact(self, points: np.ndarray):
        """Nearest-sample distance and unit gradient; ties by lowest index."""
        k = min(4, len(self.target.points))
        d, idx = self._tree.query(points, k=k)
        if k == 1:
            d = d[:, None]
            idx = idx[:, None]
        tie = d <= d[:, :1] * (1.0 + 1e-12)
        # among tied nearest samples pick the lowest point index
        masked = np.where(tie, idx, np.iinfo(idx.dtype).max)
        chosen = masked.min(axis=1)
        offset = points - self.target.points[chosen]
        dist = np.linalg.norm(offset, axis=1)
        grad = np.zeros_like(points)
        nz = dist > 1e-12
        grad[nz] = offset[nz] / dist[nz, None]
        return dist, grad

    def query(self, points: np.ndarray):
        """(distance, gradient) at world points (N, 3)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        dist, grad, inside = self._field.sample(pts)
        exact_needed = ~inside | (dist < self.config.near_surface_mm)
        if np.any(exact_needed):
            d_e, g_e = self._exact(pts[exact_needed])
            dist = dist.copy()
            grad = grad.copy()
            dist[exact_needed] = d_e
            grad[exact_needed] = g_e
        return dist, grad

    def exact_distances(self, points: np.ndarray) -> np.ndarray:
        """Exact nearest-sample distances (reporting path, never the field)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d, _ = self._tree.query(pts, k=1)
        return np.asarray(d, dtype=float)
