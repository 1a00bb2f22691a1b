"""Rigid surface alignment: centroid pre-registration plus 6-parameter
Levenberg-Marquardt refinement of the point-to-surface cost."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from brachyfuse.errors import InputError
from brachyfuse.geometry.contours import SurfaceModel, centroid
from brachyfuse.registration.config import (
    EXACT_FIT_COST_MM2_PER_POINT,
    RegistrationConfig,
)
from brachyfuse.registration.surfdist import SurfaceDistance

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class RigidTransform:
    """p -> R p + t, with R proper orthonormal."""

    rotation: np.ndarray = field(repr=False)
    translation: np.ndarray = field(repr=False)

    def __post_init__(self):
        rot = np.ascontiguousarray(self.rotation, dtype=float)
        t = np.ascontiguousarray(self.translation, dtype=float).reshape(3)
        if rot.shape != (3, 3):
            raise InputError("rotation must be 3x3")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-6:
            raise InputError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > 1e-6:
            raise InputError("rotation must be proper (det +1)")
        rot.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_params(cls, rotvec, translation, pivot=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Axis-angle rotation about ``pivot`` followed by a translation."""
        rot = Rotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_matrix()
        pivot = np.asarray(pivot, dtype=float)
        t = np.asarray(translation, dtype=float) + pivot - rot @ pivot
        return cls(rot, t)

    def apply(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        out = np.atleast_2d(pts) @ self.rotation.T + self.translation
        return out[0] if single else out

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt.copy(), -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self.compose(other))(p) = self(other(p))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def as_rotvec(self) -> np.ndarray:
        return Rotation.from_matrix(self.rotation).as_rotvec()


@dataclass
class RigidResult:
    transform: RigidTransform
    cost_history: list
    iterations: int
    converged: bool

    @property
    def final_cost(self) -> float:
        return float(self.cost_history[-1])


def _require_registrable(surface: SurfaceModel, name: str):
    pts = surface.points
    if len(pts) < 4:
        raise InputError(f"{name} surface needs >= 4 points, got {len(pts)}")
    # non-coplanarity: the point cloud must have rank 3 around its mean
    s = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    if s[-1] < 1e-9:
        raise InputError(f"{name} surface points are coplanar")


def pre_register(source: SurfaceModel, target: SurfaceModel) -> RigidTransform:
    """Identity rotation, translation superimposing the centroids."""
    if len(source) == 0 or len(target) == 0:
        raise InputError("pre-registration needs non-empty surfaces")
    return RigidTransform(np.eye(3), centroid(target) - centroid(source))


def rigid_register(
    source: SurfaceModel,
    target: SurfaceModel,
    init: RigidTransform = None,
    config: RegistrationConfig = RegistrationConfig(),
    surface_distance: SurfaceDistance = None,
) -> RigidResult:
    """LM refinement of rotation (axis-angle) and translation.

    Parameters rotate about the source centroid to decouple rotation
    from translation; the Jacobian is finite-difference (6 parameters).
    """
    from brachyfuse.registration.levmar import levenberg_marquardt

    _require_registrable(source, "source")
    _require_registrable(target, "target")
    if init is None:
        init = pre_register(source, target)
    if surface_distance is None:
        surface_distance = SurfaceDistance(target, config)

    pivot = centroid(source)
    src = source.points
    init_rotvec = init.as_rotvec()
    # translation parameter measured in the about-pivot form
    init_t = init.apply(pivot) - pivot

    def transform_of(params) -> RigidTransform:
        return RigidTransform.from_params(params[:3], params[3:], pivot)

    def residuals(params):
        moved = transform_of(params).apply(src)
        d, _ = surface_distance.query(moved)
        return d

    eps = 1e-6

    def jacobian(params):
        # chain rule: distance gradient from the query (smooth where it
        # matters), point velocities by FD on the trigonometric motion
        # only. Differencing through the distance query itself would
        # pick up nearest-sample switching noise in flat directions.
        moved = transform_of(params).apply(src)
        _, grad = surface_distance.query(moved)
        cols = np.empty((len(src), 6))
        for j in range(6):
            bumped = params.copy()
            bumped[j] += eps
            velocity = (transform_of(bumped).apply(src) - moved) / eps
            cols[:, j] = np.einsum("ij,ij->i", grad, velocity)
        return cols

    x0 = np.concatenate([init_rotvec, init_t])
    lm = levenberg_marquardt(
        residuals,
        jacobian,
        x0,
        max_iter=config.max_iterations,
        rel_tol=config.rel_tolerance,
        mu_init=config.mu_init,
        mu_decrease=config.mu_decrease,
        mu_increase=config.mu_increase,
        mu_max=config.mu_max,
        abs_tol=EXACT_FIT_COST_MM2_PER_POINT * len(src),
    )
    return RigidResult(
        transform=transform_of(lm.params),
        cost_history=lm.cost_history,
        iterations=lm.iterations,
        converged=lm.converged,
    )
