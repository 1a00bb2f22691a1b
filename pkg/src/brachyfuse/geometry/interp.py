"""Trilinear interpolation on regular grids (index-space helpers)."""

from __future__ import annotations

import numpy as np


def trilinear_fractional(arr: np.ndarray, i0: np.ndarray, frac: np.ndarray) -> np.ndarray:
    """Interpolate ``arr`` at base corner ``i0`` (N, 3 ints) plus fractional
    offset ``frac`` (N, 3 in [0, 1]). Callers guarantee i0+1 is in bounds."""
    x, y, z = i0[:, 0], i0[:, 1], i0[:, 2]
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    c000 = arr[x, y, z]
    c100 = arr[x + 1, y, z]
    c010 = arr[x, y + 1, z]
    c110 = arr[x + 1, y + 1, z]
    c001 = arr[x, y, z + 1]
    c101 = arr[x + 1, y, z + 1]
    c011 = arr[x, y + 1, z + 1]
    c111 = arr[x + 1, y + 1, z + 1]
    c00 = c000 * (1 - fx) + c100 * fx
    c10 = c010 * (1 - fx) + c110 * fx
    c01 = c001 * (1 - fx) + c101 * fx
    c11 = c011 * (1 - fx) + c111 * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    return c0 * (1 - fz) + c1 * fz


def clamped_corner_and_frac(idx: np.ndarray, dims) -> tuple[np.ndarray, np.ndarray]:
    """Split fractional indices into a clamped base corner and offset."""
    n = np.asarray(dims)
    cl = np.clip(idx, 0.0, n - 1.0)
    i0 = np.floor(cl).astype(int)
    i0 = np.clip(i0, 0, np.maximum(n - 2, 0))
    frac = cl - i0
    return i0, frac
