"""Residual surface distance and target registration error."""

import numpy as np
import pytest

from brachyfuse.errors import InputError
from brachyfuse.geometry.contours import SurfaceModel
from brachyfuse.registration import (
    TransferFunction,
    residual_surface_distance,
    target_registration_error,
)
from tests.test_rigid import ellipsoid_cloud


def fib_sphere(n, radius):
    k = np.arange(n)
    z = 1.0 - (2.0 * k + 1.0) / n
    r = np.sqrt(1.0 - z * z)
    theta = np.pi * (3.0 - np.sqrt(5.0)) * k
    return np.column_stack([r * np.cos(theta), r * np.sin(theta), z]) * radius


class TestResidualSurfaceDistance:
    def test_identical_clouds_zero(self):
        pts = ellipsoid_cloud(120)
        s = SurfaceModel("TRUS", pts)
        t = SurfaceModel("MRI", pts.copy())
        stats = residual_surface_distance(TransferFunction.identity(), s, t)
        assert stats.mean == 0.0
        assert stats.max == 0.0

    def test_parallel_planes_two_mm(self):
        xy = np.stack(np.meshgrid(np.arange(10.0), np.arange(10.0)), axis=-1).reshape(-1, 2)
        near = np.column_stack([xy, np.zeros(len(xy))])
        far = np.column_stack([xy, np.full(len(xy), 2.0)])
        stats = residual_surface_distance(
            TransferFunction.identity(),
            SurfaceModel("TRUS", near),
            SurfaceModel("MRI", far),
        )
        assert stats.mean == pytest.approx(2.0, abs=1e-12)
        assert stats.sd == pytest.approx(0.0, abs=1e-12)

    def test_concentric_spheres_radial_gap(self):
        # nearest-sample distance slightly exceeds the 1 mm analytic gap
        # because the outer sphere is sampled, not continuous
        inner = SurfaceModel("TRUS", fib_sphere(500, 20.0))
        outer = SurfaceModel("MRI", fib_sphere(20000, 21.0))
        stats = residual_surface_distance(TransferFunction.identity(), inner, outer)
        assert 1.0 <= stats.mean <= 1.06

    def test_empty_rejected(self):
        s = SurfaceModel("TRUS", ellipsoid_cloud(10))
        with pytest.raises(InputError):
            residual_surface_distance(
                TransferFunction.identity(), s, SurfaceModel("MRI", np.empty((0, 3)))
            )

    def test_mean_le_max_sd_nonneg(self, rng):
        s = SurfaceModel("TRUS", rng.normal(size=(60, 3)) * 10)
        t = SurfaceModel("MRI", rng.normal(size=(80, 3)) * 10)
        stats = residual_surface_distance(TransferFunction.identity(), s, t)
        assert stats.mean <= stats.max
        assert stats.sd >= 0.0


class TestTargetRegistrationError:
    def test_identity_identical_landmarks(self):
        lm = np.array([[0.0, 0.0, -5.0], [0.0, 0.0, 0.0], [0.0, 0.0, 5.0]])
        stats = target_registration_error(TransferFunction.identity(), lm, lm.copy())
        assert stats.mean == 0.0

    def test_uniform_offset(self):
        lm = np.array([[1.0, 2.0, 3.0], [-4.0, 0.0, 2.0], [0.5, -1.5, 7.0]])
        stats = target_registration_error(
            TransferFunction.identity(), lm, lm + [0.0, 0.0, 2.0]
        )
        assert stats.mean == pytest.approx(2.0, abs=1e-12)
        assert stats.sd == pytest.approx(0.0, abs=1e-12)
        assert stats.n == 3

    def test_length_mismatch_rejected(self):
        lm = np.zeros((3, 3))
        with pytest.raises(InputError):
            target_registration_error(TransferFunction.identity(), lm, np.zeros((4, 3)))
