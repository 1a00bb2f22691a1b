"""Surface registration: rigid + adaptive octree-spline elastic stages."""

from brachyfuse.registration.config import RegistrationConfig
from brachyfuse.registration.elastic import (
    RegistrationResult,
    elastic_register,
    register_surfaces,
)
from brachyfuse.registration.ffd import (
    LatticeLevel,
    OctreeSplineFFD,
    TransferFunction,
)
from brachyfuse.registration.levmar import LMResult, levenberg_marquardt
from brachyfuse.registration.metrics import (
    DistanceStats,
    residual_surface_distance,
    target_registration_error,
)
from brachyfuse.registration.phantom import PhantomCase, generate_phantom
from brachyfuse.registration.rigid import (
    RigidResult,
    RigidTransform,
    pre_register,
    rigid_register,
)
from brachyfuse.registration.surfdist import SurfaceDistance

__all__ = [
    "RegistrationConfig",
    "RegistrationResult",
    "elastic_register",
    "register_surfaces",
    "LatticeLevel",
    "OctreeSplineFFD",
    "TransferFunction",
    "LMResult",
    "levenberg_marquardt",
    "DistanceStats",
    "residual_surface_distance",
    "target_registration_error",
    "PhantomCase",
    "generate_phantom",
    "RigidResult",
    "RigidTransform",
    "pre_register",
    "rigid_register",
    "SurfaceDistance",
]
