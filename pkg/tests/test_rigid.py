"""Rigid stage: transform algebra, centroid pre-registration, LM refinement."""

import numpy as np
import pytest

from brachyfuse.errors import InputError
from brachyfuse.geometry.contours import SurfaceModel
from brachyfuse.registration import (
    RegistrationConfig,
    RigidTransform,
    pre_register,
    residual_surface_distance,
    rigid_register,
)


def ellipsoid_cloud(n=350, axes=(20.0, 24.0, 22.0)):
    """Golden-angle spiral mapped onto an ellipsoid."""
    k = np.arange(n)
    z = 1.0 - (2.0 * k + 1.0) / n
    r = np.sqrt(1.0 - z * z)
    theta = np.pi * (3.0 - np.sqrt(5.0)) * k
    return np.column_stack([r * np.cos(theta), r * np.sin(theta), z]) * np.asarray(axes)


class TestRigidTransform:
    def test_identity(self):
        t = RigidTransform.identity()
        p = np.array([1.0, -2.0, 3.0])
        assert np.array_equal(t.apply(p), p)

    def test_rejects_non_orthonormal(self):
        with pytest.raises(InputError):
            RigidTransform(np.eye(3) * 1.01, np.zeros(3))

    def test_rejects_reflection(self):
        flip = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(InputError):
            RigidTransform(flip, np.zeros(3))

    def test_inverse_roundtrip(self, rng):
        t = RigidTransform.from_params(rng.normal(size=3) * 0.3, rng.normal(size=3) * 5)
        pts = rng.normal(size=(40, 3)) * 10
        back = t.inverse().apply(t.apply(pts))
        assert np.allclose(back, pts, atol=1e-12)

    def test_compose_matches_sequential_application(self, rng):
        a = RigidTransform.from_params([0.1, 0.0, 0.2], [1.0, 2.0, 3.0])
        b = RigidTransform.from_params([0.0, -0.3, 0.1], [-2.0, 0.5, 1.0])
        pts = rng.normal(size=(25, 3)) * 8
        assert np.allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)), atol=1e-12)

    def test_from_params_fixes_pivot(self):
        pivot = np.array([5.0, -3.0, 2.0])
        t = RigidTransform.from_params([0.0, 0.0, 0.4], np.zeros(3), pivot=pivot)
        assert np.allclose(t.apply(pivot), pivot, atol=1e-12)

    def test_rotation_invariants(self, rng):
        t = RigidTransform.from_params(rng.normal(size=3), rng.normal(size=3))
        r = t.rotation
        assert np.max(np.abs(r.T @ r - np.eye(3))) < 1e-9
        assert abs(np.linalg.det(r) - 1.0) < 1e-9


class TestPreRegister:
    def test_identical_clouds_zero_translation(self):
        pts = ellipsoid_cloud(100)
        s = SurfaceModel("TRUS", pts)
        t = pre_register(s, SurfaceModel("MRI", pts))
        assert np.allclose(t.translation, 0.0, atol=1e-12)
        assert np.array_equal(t.rotation, np.eye(3))

    def test_pure_offset_recovered(self):
        pts = ellipsoid_cloud(100)
        t = pre_register(
            SurfaceModel("TRUS", pts), SurfaceModel("MRI", pts + [3.0, -2.0, 4.0])
        )
        assert np.allclose(t.translation, [3.0, -2.0, 4.0], atol=1e-12)

    def test_rotation_about_own_centroid_gives_zero_translation(self):
        pts = ellipsoid_cloud(100) + [4.0, 1.0, -2.0]
        c = pts.mean(axis=0)
        rot = RigidTransform.from_params([0.0, 0.2, 0.1], np.zeros(3), pivot=c)
        t = pre_register(SurfaceModel("TRUS", pts), SurfaceModel("MRI", rot.apply(pts)))
        assert np.linalg.norm(t.translation) < 1e-9

    def test_empty_surface_rejected(self):
        s = SurfaceModel("TRUS", ellipsoid_cloud(10))
        with pytest.raises(InputError):
            pre_register(s, SurfaceModel("MRI", np.empty((0, 3))))


class TestRigidRegister:
    def test_recovers_known_motion(self):
        # 5 degrees about z plus (3, -2, 4)
        pts = ellipsoid_cloud()
        truth = RigidTransform.from_params(
            np.deg2rad(5.0) * np.array([0.0, 0.0, 1.0]), [3.0, -2.0, 4.0]
        )
        res = rigid_register(
            SurfaceModel("TRUS", pts), SurfaceModel("MRI", truth.apply(pts))
        )
        assert res.converged
        err = res.transform.compose(truth.inverse())
        assert np.degrees(np.linalg.norm(err.as_rotvec())) <= 0.1
        assert np.linalg.norm(res.transform.translation - truth.translation) <= 0.1

    def test_self_registration_is_identity(self):
        pts = ellipsoid_cloud()
        s = SurfaceModel("TRUS", pts)
        t = SurfaceModel("MRI", pts.copy())
        res = rigid_register(s, t)
        assert np.degrees(np.linalg.norm(res.transform.as_rotvec())) < 0.1
        assert np.linalg.norm(res.transform.translation) < 0.05
        assert residual_surface_distance(res.transform, s, t).mean < 0.05

    def test_noise_floor(self, rng):
        pts = ellipsoid_cloud()
        noisy = pts + rng.normal(0.0, 0.5, size=pts.shape)
        res = rigid_register(SurfaceModel("TRUS", pts), SurfaceModel("MRI", noisy))
        stats = residual_surface_distance(
            res.transform, SurfaceModel("TRUS", pts), SurfaceModel("MRI", noisy)
        )
        assert 0.2 <= stats.mean <= 0.8

    def test_source_permutation_leaves_stats_unchanged(self, rng):
        pts = ellipsoid_cloud(200)
        truth = RigidTransform.from_params([0.02, -0.05, 0.04], [2.0, 1.0, -3.0])
        tgt = SurfaceModel("MRI", truth.apply(pts))
        perm = rng.permutation(len(pts))
        res_a = rigid_register(SurfaceModel("TRUS", pts), tgt)
        res_b = rigid_register(SurfaceModel("TRUS", pts[perm]), tgt)
        sa = residual_surface_distance(res_a.transform, SurfaceModel("TRUS", pts), tgt)
        sb = residual_surface_distance(res_b.transform, SurfaceModel("TRUS", pts[perm]), tgt)
        assert abs(sa.mean - sb.mean) <= 1e-9
        assert abs(sa.max - sb.max) <= 1e-9

    def test_budget_exhaustion_flags_not_converged(self):
        pts = ellipsoid_cloud()
        truth = RigidTransform.from_params([0.0, 0.0, 0.3], [12.0, -9.0, 6.0])
        cfg = RegistrationConfig().replace(max_iterations=1)
        res = rigid_register(
            SurfaceModel("TRUS", pts),
            SurfaceModel("MRI", truth.apply(pts)),
            init=RigidTransform.identity(),
            config=cfg,
        )
        assert not res.converged
        assert res.iterations == 1
        assert res.cost_history[-1] <= res.cost_history[0]

    def test_monotone_cost_history(self):
        pts = ellipsoid_cloud()
        truth = RigidTransform.from_params([0.0, 0.05, 0.08], [4.0, 2.0, -1.0])
        res = rigid_register(
            SurfaceModel("TRUS", pts), SurfaceModel("MRI", truth.apply(pts))
        )
        hist = res.cost_history
        assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))

    def test_coplanar_source_rejected(self):
        grid = np.stack(
            np.meshgrid(np.arange(5.0), np.arange(5.0), [0.0]), axis=-1
        ).reshape(-1, 3)
        with pytest.raises(InputError):
            rigid_register(
                SurfaceModel("TRUS", grid), SurfaceModel("MRI", ellipsoid_cloud())
            )
