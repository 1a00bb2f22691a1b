from brachyfuse.geometry.contours import (
    Contour,
    ContourStack,
    SurfaceModel,
    centroid,
    contour_area,
    contour_centroid2d,
    merge_point_sets,
    planimetric_volume,
)
from brachyfuse.geometry.distance_field import DistanceField, build_distance_field
from brachyfuse.geometry.grid import GridSpec, StructureMask
from brachyfuse.geometry.voxelize import points_in_polygon, voxelize

__all__ = [
    "Contour",
    "ContourStack",
    "SurfaceModel",
    "centroid",
    "contour_area",
    "contour_centroid2d",
    "merge_point_sets",
    "planimetric_volume",
    "DistanceField",
    "build_distance_field",
    "GridSpec",
    "StructureMask",
    "points_in_polygon",
    "voxelize",
]
