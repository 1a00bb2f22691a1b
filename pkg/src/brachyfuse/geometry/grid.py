"""Regular voxel grids and boolean structure masks.

Convention used everywhere in this package: ``origin`` is the world
position (mm) of the *center* of voxel (0, 0, 0), and the center of
voxel (i, j, k) is ``origin + (i*sx, j*sy, k*sz)``.  Arrays are indexed
[i, j, k] = [x, y, z].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from brachyfuse.errors import InputError


def _as_triple(value, name: str) -> tuple[float, float, float]:
    arr = np.asarray(value, dtype=float).ravel()
    if arr.size == 1:
        arr = np.repeat(arr, 3)
    if arr.size != 3 or not np.all(np.isfinite(arr)):
        raise InputError(f"{name} must be a finite scalar or 3-vector, got {value!r}")
    return (float(arr[0]), float(arr[1]), float(arr[2]))


@dataclass(frozen=True)
class GridSpec:
    """Geometry of a regular axis-aligned voxel grid."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]

    def __init__(self, dims, spacing, origin=(0.0, 0.0, 0.0)):
        dims = tuple(int(d) for d in np.asarray(dims).ravel())
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise InputError(f"grid dims must be 3 positive integers, got {dims}")
        spacing = _as_triple(spacing, "spacing")
        if any(s <= 0 for s in spacing):
            raise InputError(f"grid spacing must be positive, got {spacing}")
        origin = _as_triple(origin, "origin")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def from_bounds(cls, lo, hi, spacing, pad: float = 0.0) -> "GridSpec":
        """Smallest grid whose voxel extent covers [lo - pad, hi + pad]."""
        lo = np.asarray(lo, dtype=float) - pad
        hi = np.asarray(hi, dtype=float) + pad
        if np.any(hi < lo):
            raise InputError("bounds max must be >= min")
        sp = np.asarray(_as_triple(spacing, "spacing"))
        dims = np.maximum(1, np.ceil((hi - lo) / sp - 1e-9).astype(int))
        origin = lo + sp / 2.0
        return cls(tuple(dims), tuple(sp), tuple(origin))

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def axis_coords(self, axis: int) -> np.ndarray:
        """World coordinates of voxel centers along one axis."""
        return self.origin[axis] + self.spacing[axis] * np.arange(self.dims[axis])

    def voxel_centers(self) -> np.ndarray:
        """All voxel centers as an (nx, ny, nz, 3) array."""
        xs, ys, zs = (self.axis_coords(a) for a in range(3))
        gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
        return np.stack([gx, gy, gz], axis=-1)

    def world_to_index(self, points: np.ndarray) -> np.ndarray:
        """Continuous (fractional) voxel indices for world points (..., 3)."""
        pts = np.asarray(points, dtype=float)
        return (pts - np.asarray(self.origin)) / np.asarray(self.spacing)

    def index_to_world(self, indices: np.ndarray) -> np.ndarray:
        idx = np.asarray(indices, dtype=float)
        return np.asarray(self.origin) + idx * np.asarray(self.spacing)

    def extent(self) -> tuple[np.ndarray, np.ndarray]:
        """World bounds of the voxel *extent* (outer faces, not centers)."""
        o = np.asarray(self.origin)
        sp = np.asarray(self.spacing)
        n = np.asarray(self.dims)
        return o - sp / 2.0, o + (n - 1) * sp + sp / 2.0

    def covers(self, lo, hi) -> bool:
        glo, ghi = self.extent()
        eps = 1e-9
        return bool(np.all(np.asarray(lo) >= glo - eps) and np.all(np.asarray(hi) <= ghi + eps))


@dataclass(frozen=True)
class StructureMask:
    """Boolean voxel occupancy of one anatomical structure."""

    grid: GridSpec
    inside: np.ndarray = field(repr=False)
    structure_name: str = "structure"

    def __post_init__(self):
        arr = np.ascontiguousarray(self.inside, dtype=bool)
        if arr.shape != self.grid.dims:
            raise InputError(
                f"mask shape {arr.shape} does not match grid dims {self.grid.dims}"
            )
        arr.flags.writeable = False
        object.__setattr__(self, "inside", arr)

    @property
    def voxel_count(self) -> int:
        return int(np.count_nonzero(self.inside))

    @property
    def volume_cc(self) -> float:
        return self.voxel_count * self.grid.voxel_volume_mm3 / 1000.0
