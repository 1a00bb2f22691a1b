"""Composite slice synthesis and cross-modality contour transport.

A composite image shows, around a cursor position, two diagonal
quadrants of the original intra-op slice and two quadrants resampled
from the pre-op volume through the transfer function. The transfer is
duck-typed: any object with ``apply(points) -> points`` works, and
contour mapping additionally needs ``invert_points(points, tol) ->
(points, converged_mask)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from brachyfuse.errors import InputError, MappingError
from brachyfuse.geometry.contours import Contour, ContourStack
from brachyfuse.geometry.grid import GridSpec
from brachyfuse.geometry.interp import clamped_corner_and_frac, trilinear_fractional

LAYOUTS = ("tl-br", "tr-bl")  # which diagonal quadrant pair shows the intra-op image


@dataclass(frozen=True)
class ScalarVolume:
    """Gridded scalar intensities (one image volume)."""

    grid: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values)
        if arr.shape != self.grid.dims:
            raise InputError(f"values shape {arr.shape} != grid dims {self.grid.dims}")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)


def trilinear_sample(volume: ScalarVolume, points, fill=0.0, return_inside=False):
    """Trilinear interpolation at world points; outside the volume -> fill."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    idx = volume.grid.world_to_index(pts)
    n = np.asarray(volume.grid.dims)
    inside = np.all((idx >= 0.0) & (idx <= n - 1.0), axis=1)
    i0, frac = clamped_corner_and_frac(idx, n)
    vals = trilinear_fractional(volume.values.astype(float, copy=False), i0, frac)
    vals = np.where(inside, vals, float(fill))
    if return_inside:
        return vals, inside
    return vals


@dataclass(frozen=True)
class SliceGeometry:
    """Affine map from (column u, row v, slice n) pixel indices to mm."""

    width: int
    height: int
    pixel_spacing: tuple  # (du, dv) mm
    origin: tuple  # world position of pixel (0, 0) on slice 0
    slice_step_mm: float

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise InputError("slice dims must be positive")
        du, dv = self.pixel_spacing
        if du <= 0 or dv <= 0 or self.slice_step_mm <= 0:
            raise InputError("pixel spacing and slice step must be positive")
        object.__setattr__(self, "pixel_spacing", (float(du), float(dv)))
        object.__setattr__(self, "origin", tuple(float(c) for c in self.origin))

    def pixel_to_world(self, u, v, n) -> np.ndarray:
        du, dv = self.pixel_spacing
        ox, oy, oz = self.origin
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        n = np.asarray(n, dtype=float)
        return np.stack(
            [ox + u * du, oy + v * dv, np.broadcast_to(oz + n * self.slice_step_mm, u.shape)],
        axis=-1)

    def slice_z(self, n) -> float:
        return self.origin[2] + float(n) * self.slice_step_mm

    def nearest_slice(self, z) -> np.ndarray:
        return np.round((np.asarray(z, dtype=float) - self.origin[2]) / self.slice_step_mm).astype(int)


def _apply_transfer(f, points: np.ndarray) -> np.ndarray:
    if hasattr(f, "apply"):
        return np.asarray(f.apply(points), dtype=float)
    return np.asarray(f(points), dtype=float)


@dataclass(frozen=True)
class CompositeImage:
    pixels: np.ndarray = field(repr=False)
    trus_mask: np.ndarray = field(repr=False)  # True where the intra-op image shows
    cursor: tuple
    layout: str
    out_of_bounds_count: int
    slice_index: int = 0

    def __post_init__(self):
        for name in ("pixels", "trus_mask"):
            arr = np.ascontiguousarray(getattr(self, name))
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def composite_slice(
    trus_slice: np.ndarray,
    geom: SliceGeometry,
    n: int,
    mri: ScalarVolume,
    f,
    cursor: tuple,
    layout: str = "tl-br",
    fill=0.0,
) -> CompositeImage:
    """Blend one intra-op slice with the registered pre-op volume.

    ``trus_slice`` is (height, width); ``cursor`` = (cu, cv) in pixel
    units splits the image into quadrants (u >= cu is right, v >= cv is
    bottom). With layout "tl-br" the top-left and bottom-right quadrants
    show the intra-op image, the other two the mapped pre-op data.
    """
    img = np.asarray(trus_slice)
    if img.shape != (geom.height, geom.width):
        raise InputError(
            f"slice shape {img.shape} does not match geometry "
            f"({geom.height}, {geom.width})"
        )
    if layout not in LAYOUTS:
        raise InputError(f"layout must be one of {LAYOUTS}, got {layout!r}")
    cu, cv = cursor

    vv, uu = np.meshgrid(np.arange(geom.height), np.arange(geom.width), indexing="ij")
    right = uu >= cu
    bottom = vv >= cv
    if layout == "tl-br":
        trus_mask = (right & bottom) | (~right & ~bottom)
    else:
        trus_mask = (right & ~bottom) | (~right & bottom)

    # pre-op render computed for the full frame: pixel values are a pure
    # function of (pixel, f, volumes); the cursor only selects visibility
    world = geom.pixel_to_world(uu.ravel(), vv.ravel(), n)
    mapped = _apply_transfer(f, world)
    mri_vals, inside = trilinear_sample(mri, mapped, fill=fill, return_inside=True)
    mri_img = mri_vals.reshape(geom.height, geom.width)
    oob = int(np.count_nonzero(~inside.reshape(geom.height, geom.width) & ~trus_mask))

    pixels = np.where(trus_mask, img.astype(float, copy=False), mri_img)
    return CompositeImage(
        pixels=pixels,
        trus_mask=trus_mask,
        cursor=(float(cu), float(cv)),
        layout=layout,
        out_of_bounds_count=oob,
        slice_index=int(n),
    )


def _polar_order(points2d: np.ndarray) -> np.ndarray:
    center = points2d.mean(axis=0)
    rel = points2d - center
    ang = np.arctan2(rel[:, 1], rel[:, 0])
    rad = np.hypot(rel[:, 0], rel[:, 1])
    order = np.lexsort((rad, ang))
    return points2d[order]


def _collinear(points2d: np.ndarray) -> bool:
    if len(points2d) < 3:
        return True
    rel = points2d - points2d[0]
    cross = rel[1:, 0][:, None] * rel[1:, 1][None, :] - rel[1:, 1][:, None] * rel[1:, 0][None, :]
    return bool(np.all(np.abs(cross) < 1e-9))


def map_mri_contours_to_trus(
    mri_contours: ContourStack,
    f,
    geom: SliceGeometry,
    tol_mm: float = 0.01,
    max_failure_fraction: float = 0.01,
) -> ContourStack:
    """Transport pre-op contours into the intra-op frame through f^-1.

    Every vertex is inverted, the resulting 3-D points are binned to the
    nearest intra-op slice plane, and each slice's points are re-closed
    by polar-angle ordering around their centroid (canonical start, so
    vertex order is reproducible but may be a cyclic shift of the
    original). Degenerate slices (< 3 points or collinear) are dropped.
    Raises MappingError if more than ``max_failure_fraction`` of the
    vertices fail to invert.
    """
    if not hasattr(f, "invert_points"):
        raise InputError("transfer must provide invert_points(points, tol)")
    pts = mri_contours.all_points()
    mapped, ok = f.invert_points(pts, tol_mm)
    n_failed = int(np.count_nonzero(~ok))
    if n_failed > max_failure_fraction * len(pts):
        raise MappingError(
            f"{n_failed}/{len(pts)} vertices failed to invert",
            failed_vertices=pts[~ok].tolist(),
        )
    mapped = mapped[ok]

    slice_ids = geom.nearest_slice(mapped[:, 2])
    contours = []
    for sid in np.unique(slice_ids):
        group = mapped[slice_ids == sid][:, :2]
        if len(group) < 3 or _collinear(group):
            continue
        contours.append(Contour(int(sid), geom.slice_z(int(sid)), _polar_order(group)))
    if not contours:
        raise MappingError("no non-degenerate contours survived mapping")
    return ContourStack(
        structure_name=mri_contours.structure_name,
        frame="TRUS",
        slice_spacing_mm=geom.slice_step_mm,
        contours=contours,
    )
