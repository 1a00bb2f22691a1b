"""Contour stack voxelization.

Staircase model: every voxel layer is assigned to the nearest contour
plane (within half a slice spacing); inside/outside is decided per voxel
center with the even-odd rule. No interpolation between slices.

Each plane at z_k owns the half-open z-cell [z_k - s/2, z_k + s/2), so a
center exactly on a cell boundary belongs to the higher plane and the
staircase region of an n-slice stack is exactly n*s thick.
"""

from __future__ import annotations

import numpy as np

from brachyfuse.errors import GridCoverageError
from brachyfuse.geometry.contours import ContourStack
from brachyfuse.geometry.grid import GridSpec, StructureMask


def points_in_polygon(u: np.ndarray, v: np.ndarray, polygon: np.ndarray) -> np.ndarray:
    """Even-odd (crossing number) point-in-polygon test, vectorized over
    query arrays ``u``, ``v`` of any common shape."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    inside = np.zeros(u.shape, dtype=bool)
    x0, y0 = polygon[-1]
    for x1, y1 in polygon:
        straddles = (y0 > v) != (y1 > v)
        if np.any(straddles):
            # y1 != y0 wherever straddles holds, so the division is safe
            x_cross = np.where(
                straddles, (x1 - x0) * (v - y0) / np.where(straddles, y1 - y0, 1.0) + x0, 0.0
            )
            inside ^= straddles & (u < x_cross)
        x0, y0 = x1, y1
    return inside


def voxelize(stack: ContourStack, grid: GridSpec, structure_name=None) -> StructureMask:
    """Rasterize a contour stack onto a voxel grid.

    A voxel is inside iff its center z lies within +-spacing/2 of some
    contour plane and its (u, v) center is inside the combined even-odd
    region of that plane's contours. Grid must cover the stack bounds.
    """
    lo, hi = stack.bounds()
    if not grid.covers(lo, hi):
        glo, ghi = grid.extent()
        raise GridCoverageError(
            f"grid extent {glo}..{ghi} does not cover stack bounds {lo}..{hi}"
        )

    nx, ny, nz = grid.dims
    xs = grid.axis_coords(0)
    ys = grid.axis_coords(1)
    zs = grid.axis_coords(2)
    gu, gv = np.meshgrid(xs, ys, indexing="ij")

    plane_z = np.unique(stack.z_values())
    s = stack.slice_spacing_mm
    z0 = plane_z[0]
    present = {int(round((pz - z0) / s)): pz for pz in plane_z}

    # half-open cell index per z-layer (ties at a boundary go up); stacks
    # may have gaps, so the cell must also hold an actual contour plane
    cell = np.floor((zs - z0 + s / 2.0 + 1e-9) / s).astype(int)

    inside = np.zeros((nx, ny, nz), dtype=bool)
    plane_masks: dict[int, np.ndarray] = {}
    for k in range(nz):
        p = int(cell[k])
        if p not in present:
            continue
        if p not in plane_masks:
            m = np.zeros((nx, ny), dtype=bool)
            for c in stack.contours:
                if abs(c.z_mm - present[p]) < 1e-9:
                    m ^= points_in_polygon(gu, gv, c.vertices)
            plane_masks[p] = m
        inside[:, :, k] = plane_masks[p]

    name = structure_name if structure_name is not None else stack.structure_name
    return StructureMask(grid=grid, inside=inside, structure_name=name)
