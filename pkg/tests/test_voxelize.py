import numpy as np
import pytest

from brachyfuse.errors import GridCoverageError
from brachyfuse.geometry import (
    Contour,
    ContourStack,
    GridSpec,
    planimetric_volume,
    points_in_polygon,
    voxelize,
)
from conftest import cube_stack, square


def test_points_in_polygon_square():
    poly = square(10.0)
    u = np.array([5.0, -1.0, 10.5, 0.5])
    v = np.array([5.0, 5.0, 5.0, 0.5])
    np.testing.assert_array_equal(
        points_in_polygon(u, v, poly), [True, False, False, True]
    )


def test_center_half_voxel_outside_edge_is_outside():
    # polygon edge at u=10; voxel center at 10.5 sits half a voxel outside
    poly = square(10.0)
    assert not points_in_polygon(np.array([10.5]), np.array([5.0]), poly)[0]


def test_aligned_cube_is_exact_at_1mm():
    stack = cube_stack(side=10.0, offset=0.0, spacing=1.0)
    grid = GridSpec.from_bounds(*stack.bounds(), spacing=1.0, pad=2.0)
    mask = voxelize(stack, grid)
    assert abs(mask.volume_cc - 1.000) / 1.000 <= 0.12
    assert mask.volume_cc == pytest.approx(1.000)


def test_aligned_cube_at_quarter_mm():
    stack = cube_stack(side=10.0, offset=0.0, spacing=1.0)
    grid = GridSpec.from_bounds(*stack.bounds(), spacing=0.25, pad=2.0)
    mask = voxelize(stack, grid)
    assert abs(mask.volume_cc - 1.000) / 1.000 <= 0.02


def test_offset_cube_within_stated_bounds():
    """Grid phase not aligned with the cube; staircase error must stay
    within the documented per-resolution bounds."""
    stack = cube_stack(side=10.0, offset=0.37, spacing=1.0)
    pv = planimetric_volume(stack)
    for spacing, bound in [(1.0, 0.12), (0.25, 0.02)]:
        grid = GridSpec.from_bounds(*stack.bounds(), spacing=spacing, pad=2.0)
        mask = voxelize(stack, grid)
        assert abs(mask.volume_cc - pv) / pv <= bound


def test_error_halves_with_voxel_size():
    # first-order convergence, averaged over grid phases to kill sawtooth noise
    stack = cube_stack(side=9.73, offset=0.41, spacing=1.0)
    pv = planimetric_volume(stack)
    lo, hi = stack.bounds()
    rng = np.random.default_rng(7)
    phases = rng.uniform(0.0, 1.0, size=8)

    def mean_err(spacing):
        errs = []
        for ph in phases:
            grid = GridSpec.from_bounds(lo - 2.0 - ph, hi + 2.0, spacing)
            errs.append(abs(voxelize(stack, grid).volume_cc - pv) / pv)
        return np.mean(errs)

    assert mean_err(0.25) <= 0.5 * mean_err(1.0)


def test_region_above_top_slice_is_outside():
    stack = cube_stack(side=10.0, offset=0.0, spacing=1.0)
    grid = GridSpec.from_bounds(*stack.bounds(), spacing=1.0, pad=5.0)
    mask = voxelize(stack, grid)
    zs = grid.axis_coords(2)
    above = zs > 10.0 + 0.5  # beyond staircase reach of the top plane
    assert not mask.inside[:, :, above].any()


def test_grid_not_covering_stack_raises():
    stack = cube_stack(side=10.0, offset=0.0, spacing=1.0)
    small = GridSpec(dims=(5, 5, 5), spacing=1.0, origin=(0.0, 0.0, 0.0))
    with pytest.raises(GridCoverageError):
        voxelize(stack, small)


def test_two_contours_same_slice_xor():
    # annulus: outer square minus inner square via even-odd combination
    outer = Contour(0, 0.0, square(10.0))
    inner = Contour(0, 0.0, square(4.0, offset=(3.0, 3.0)))
    stack = ContourStack("rectum", "TRUS", 1.0, [outer, inner])
    grid = GridSpec.from_bounds(*stack.bounds(), spacing=1.0, pad=2.0)
    mask = voxelize(stack, grid)
    expected_mm3 = (100.0 - 16.0) * 1.0  # one slice, 1 mm thick
    assert mask.volume_cc == pytest.approx(expected_mm3 / 1000.0)


def test_mask_volume_equals_count_times_voxel_volume():
    stack = cube_stack(side=8.0, offset=0.0, spacing=1.0)
    grid = GridSpec.from_bounds(*stack.bounds(), spacing=0.5, pad=1.0)
    mask = voxelize(stack, grid)
    assert mask.volume_cc == pytest.approx(
        mask.voxel_count * grid.voxel_volume_mm3 / 1000.0
    )
