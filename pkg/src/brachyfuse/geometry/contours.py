"""Planar contours, contour stacks and surface point models.

Points are plain float arrays: shape (3,) for a single point, (N, 3)
for point sets, all coordinates in millimetres.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from brachyfuse.errors import FrameMismatchError, InputError, InvalidContourError

DEDUP_TOLERANCE_MM = 0.01


def _proper_self_intersection(vertices: np.ndarray) -> bool:
    """True if any two non-adjacent edges properly cross (shared endpoints
    and touching contacts do not count)."""
    n = len(vertices)
    p1 = vertices
    p2 = np.roll(vertices, -1, axis=0)

    def cross(o, a, b):
        return (a[..., 0] - o[..., 0]) * (b[..., 1] - o[..., 1]) - (
            a[..., 1] - o[..., 1]
        ) * (b[..., 0] - o[..., 0])

    a1 = p1[:, None, :]
    a2 = p2[:, None, :]
    b1 = p1[None, :, :]
    b2 = p2[None, :, :]
    d1 = cross(a1, a2, b1)
    d2 = cross(a1, a2, b2)
    d3 = cross(b1, b2, a1)
    d4 = cross(b1, b2, a2)
    crossing = (d1 * d2 < 0) & (d3 * d4 < 0)

    i = np.arange(n)
    adjacent = (np.abs(i[:, None] - i[None, :]) <= 1) | (
        np.abs(i[:, None] - i[None, :]) == n - 1
    )
    return bool(np.any(crossing & ~adjacent))


@dataclass(frozen=True)
class Contour:
    """Closed planar polygon on one image slice.

    ``vertices`` holds (u, v) pairs in mm; the closing edge back to the
    first vertex is implicit.
    """

    slice_index: int
    z_mm: float
    vertices: np.ndarray = field(repr=False)

    def __post_init__(self):
        verts = np.ascontiguousarray(self.vertices, dtype=float)
        if verts.ndim != 2 or verts.shape[1] != 2:
            raise InvalidContourError(f"vertices must be (n, 2), got {verts.shape}")
        if len(verts) < 3:
            raise InvalidContourError(f"contour needs >=3 vertices, got {len(verts)}")
        if not np.all(np.isfinite(verts)) or not np.isfinite(self.z_mm):
            raise InvalidContourError("contour coordinates must be finite")
        if _proper_self_intersection(verts):
            raise InvalidContourError(
                f"contour at z={self.z_mm} is self-intersecting"
            )
        verts.flags.writeable = False
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "slice_index", int(self.slice_index))
        object.__setattr__(self, "z_mm", float(self.z_mm))


def contour_area(c: Contour) -> float:
    """Shoelace area in mm², positive for either vertex orientation."""
    v = c.vertices
    x, y = v[:, 0], v[:, 1]
    signed = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    return float(abs(signed))


def contour_centroid2d(c: Contour) -> np.ndarray:
    """Area centroid of the polygon (falls back to vertex mean if degenerate)."""
    v = c.vertices
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    w = x * yn - xn * y
    a = 0.5 * np.sum(w)
    if abs(a) < 1e-12:
        return v.mean(axis=0)
    cx = np.sum((x + xn) * w) / (6.0 * a)
    cy = np.sum((y + yn) * w) / (6.0 * a)
    return np.array([cx, cy])


@dataclass(frozen=True)
class ContourStack:
    """Parallel-slice segmentation of one structure in one frame."""

    structure_name: str
    frame: str
    slice_spacing_mm: float
    contours: tuple

    def __init__(self, structure_name, frame, slice_spacing_mm, contours):
        spacing = float(slice_spacing_mm)
        if spacing <= 0:
            raise InputError(f"slice spacing must be positive, got {spacing}")
        contours = tuple(sorted(contours, key=lambda c: c.z_mm))
        if not contours:
            raise InputError("contour stack needs at least one contour")
        z0 = contours[0].z_mm
        for c in contours:
            steps = (c.z_mm - z0) / spacing
            if abs(steps - round(steps)) > 1e-6:
                raise InputError(
                    f"contour z={c.z_mm} is not a multiple of spacing "
                    f"{spacing} from z={z0}"
                )
        object.__setattr__(self, "structure_name", str(structure_name))
        object.__setattr__(self, "frame", str(frame))
        object.__setattr__(self, "slice_spacing_mm", spacing)
        object.__setattr__(self, "contours", contours)

    def z_values(self) -> np.ndarray:
        return np.array([c.z_mm for c in self.contours])

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """(min, max) of the 3-D bounding box over all vertices."""
        allv = np.vstack([c.vertices for c in self.contours])
        zs = self.z_values()
        lo = np.array([allv[:, 0].min(), allv[:, 1].min(), zs.min()])
        hi = np.array([allv[:, 0].max(), allv[:, 1].max(), zs.max()])
        return lo, hi

    def all_points(self) -> np.ndarray:
        """All contour vertices lifted to 3-D, (N, 3)."""
        parts = [
            np.column_stack([c.vertices, np.full(len(c.vertices), c.z_mm)])
            for c in self.contours
        ]
        return np.vstack(parts)


def planimetric_volume(stack: ContourStack) -> float:
    """Sum of contour areas times slice spacing, in cc."""
    total_mm3 = sum(contour_area(c) for c in stack.contours) * stack.slice_spacing_mm
    return float(total_mm3 / 1000.0)


@dataclass(frozen=True)
class SurfaceModel:
    """Point-sampled organ surface in a named coordinate frame.

    ``tags`` optionally records acquisition provenance per point
    (e.g. "axial" / "pseudo-sagittal").
    """

    frame: str
    points: np.ndarray = field(repr=False)
    tags: Optional[tuple] = None

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=float)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise InputError(f"surface points must be (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InputError("surface points must be finite")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.tags is not None:
            tags = tuple(self.tags)
            if len(tags) != len(pts):
                raise InputError("tags length must match point count")
            object.__setattr__(self, "tags", tags)

    def __len__(self) -> int:
        return len(self.points)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self.points) == 0:
            raise InputError("empty surface has no bounds")
        return self.points.min(axis=0), self.points.max(axis=0)


def centroid(points) -> np.ndarray:
    """Arithmetic mean of a point set; accepts SurfaceModel or (N, 3) array."""
    if isinstance(points, SurfaceModel):
        pts = points.points
    else:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise InputError("centroid of empty point set")
    return pts.mean(axis=0)


def merge_point_sets(axial: SurfaceModel, sagittal: SurfaceModel) -> SurfaceModel:
    """Concatenate two acquisitions of the same frame.

    Points of the second set closer than 0.01 mm to any earlier point are
    dropped (first occurrence wins); provenance tags are carried through.
    """
    if axial.frame != sagittal.frame:
        raise FrameMismatchError(
            f"cannot merge frames {axial.frame!r} and {sagittal.frame!r}"
        )

    def tags_of(s: SurfaceModel, default: str) -> list:
        if s.tags is not None:
            return list(s.tags)
        return [default] * len(s)

    pts = np.vstack([axial.points, sagittal.points])
    tags = tags_of(axial, "axial") + tags_of(sagittal, "pseudo-sagittal")
    keep = np.ones(len(pts), dtype=bool)
    if len(pts) > 1:
        pairs = cKDTree(pts).query_pairs(DEDUP_TOLERANCE_MM, output_type="ndarray")
        if len(pairs):
            keep[pairs.max(axis=1)] = False
    kept_tags = tuple(t for t, k in zip(tags, keep) if k)
    return SurfaceModel(frame=axial.frame, points=pts[keep], tags=kept_tags)
