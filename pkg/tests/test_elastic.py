"""Elastic stage: limiting cases, regularizer behavior, adaptive refinement."""

import numpy as np
import pytest

from brachyfuse.geometry.contours import SurfaceModel
from brachyfuse.registration import (
    RegistrationConfig,
    RigidTransform,
    SurfaceDistance,
    elastic_register,
    generate_phantom,
    pre_register,
    register_surfaces,
    rigid_register,
    target_registration_error,
)
from tests.test_rigid import ellipsoid_cloud

CFG = RegistrationConfig()


@pytest.fixture(scope="module")
def bulge_case():
    return generate_phantom(5, amplitude_mm=3.0, noise_sd_mm=0.0)


@pytest.fixture(scope="module")
def bulge_result(bulge_case):
    return register_surfaces(bulge_case.source, bulge_case.target)


def test_zero_deformation_keeps_ffd_flat():
    pts = ellipsoid_cloud(280)
    src = SurfaceModel("TRUS", pts)
    tgt = SurfaceModel("MRI", pts.copy())
    res = elastic_register(src, tgt, RigidTransform.identity())
    assert res.residual_stats.mean < 0.05
    assert res.transfer.ffd.max_displacement() < 0.05


def test_smooth_bulge_recovered(bulge_result):
    assert bulge_result.residual_stats.mean < 0.5


def test_elastic_never_worse_than_rigid(bulge_result):
    assert bulge_result.residual_stats.mean <= bulge_result.rigid_residual_stats.mean


def test_huge_lambda_collapses_to_rigid(bulge_case):
    sd = SurfaceDistance(bulge_case.target, CFG)
    init = pre_register(bulge_case.source, bulge_case.target)
    rig = rigid_register(bulge_case.source, bulge_case.target, init, CFG, sd)
    stiff = elastic_register(
        bulge_case.source,
        bulge_case.target,
        rig.transform,
        CFG.replace(regularization_weight=1e6),
        sd,
    )
    gap = np.linalg.norm(
        stiff.transfer.apply(bulge_case.source.points)
        - rig.transform.apply(bulge_case.source.points),
        axis=1,
    )
    assert gap.max() < 0.05
    assert stiff.transfer.ffd.max_displacement() < 0.05


def test_cost_histories_monotone(bulge_result):
    for hist in bulge_result.cost_histories:
        assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))


def test_levels_chain_costs(bulge_result):
    # each level starts from the previous optimum: no accepted cost above
    # the first level's starting cost
    start = bulge_result.cost_histories[0][0]
    for hist in bulge_result.cost_histories:
        assert all(c <= start + 1e-12 for c in hist)


def test_structured_residual_triggers_refinement(bulge_result):
    # smooth noiseless bulge leaves localized residual after level 1
    assert len(bulge_result.iterations_per_level) >= 2
    lev1 = bulge_result.transfer.ffd.levels[1]
    assert lev1.cells_refined is not None and lev1.cells_refined.any()


def test_refined_levels_leave_inactive_points_at_zero(bulge_result):
    for lev in bulge_result.transfer.ffd.levels:
        inactive = ~lev.active
        assert np.all(lev.displacements[inactive] == 0.0)


def test_iterations_respect_budget(bulge_result):
    assert all(
        1 <= it <= CFG.max_iterations for it in bulge_result.iterations_per_level
    )
    assert len(bulge_result.iterations_per_level) <= CFG.levels


def test_noise_dominated_case_declines_refinement():
    case = generate_phantom(2, amplitude_mm=3.0, noise_sd_mm=0.3)
    res = register_surfaces(case.source, case.target)
    # near-uniform residual: the local-vs-global rule finds nothing to split
    assert len(res.iterations_per_level) == 2


def test_transfer_maps_phantom_landmarks(bulge_case, bulge_result):
    tre = target_registration_error(
        bulge_result.transfer, bulge_case.source_landmarks, bulge_case.target_landmarks
    )
    assert tre.mean <= 2.5


def test_result_report_dict(bulge_result):
    report = bulge_result.as_dict()
    assert report["residual"]["mean_mm"] == bulge_result.residual_stats.mean
    assert report["rigid_residual"]["mean_mm"] == bulge_result.rigid_residual_stats.mean
    assert report["iterations_per_level"] == bulge_result.iterations_per_level
