"""DVH metrics against brute-force counting, plus constraint checks and
paired evaluation rows."""

import numpy as np
import pytest

from brachyfuse.dosimetry import (
    DoseGrid,
    PairedEvaluation,
    Seed,
    SeedPlan,
    SourceModel,
    check_constraints,
    compare_structures,
    compute_dvh,
    dose_at_volume,
    volume_at_dose,
)
from brachyfuse.errors import InputError
from brachyfuse.geometry import GridSpec, StructureMask
from conftest import cube_stack


def make_dvh(doses, spacing=1.0, bin_width=0.8, name="prostate"):
    doses = np.asarray(doses, dtype=float)
    n = len(doses)
    grid = GridSpec(dims=(n, 1, 1), spacing=spacing, origin=(0.0, 0.0, 0.0))
    dose = DoseGrid(grid=grid, dose_gy=doses.reshape(n, 1, 1))
    mask = StructureMask(grid=grid, inside=np.ones((n, 1, 1), bool), structure_name=name)
    return compute_dvh(dose, mask, bin_width)


class TestComputeDvh:
    def test_uniform_dose_is_step_function(self):
        dvh = make_dvh([170.0] * 64)
        edges = dvh.dose_edges_gy
        assert (dvh.fraction_pct[edges <= 170.0] == 100.0).all()
        assert (dvh.fraction_pct[edges > 170.0] == 0.0).all()

    def test_two_voxel_midpoint(self):
        dvh = make_dvh([100.0, 200.0])
        k = np.searchsorted(dvh.dose_edges_gy, 150.0)
        assert dvh.fraction_pct[k] == 50.0

    def test_starts_at_100_ends_at_0(self):
        dvh = make_dvh([3.0, 7.0, 11.0])
        assert dvh.fraction_pct[0] == 100.0
        assert dvh.fraction_pct[-1] == 0.0

    def test_matches_brute_force_counting(self, rng):
        doses = rng.uniform(0.0, 250.0, size=500)
        dvh = make_dvh(doses)
        for edge, frac in zip(dvh.dose_edges_gy, dvh.fraction_pct):
            expected = 100.0 * np.count_nonzero(doses >= edge) / len(doses)
            assert frac == pytest.approx(expected, abs=1e-12)

    def test_total_volume(self):
        dvh = make_dvh([1.0] * 10, spacing=2.0)
        assert dvh.total_volume_cc == pytest.approx(10 * 8.0 / 1000.0)

    def test_empty_mask_rejected(self):
        grid = GridSpec(dims=(4, 4, 4), spacing=1.0, origin=(0, 0, 0))
        dose = DoseGrid(grid=grid, dose_gy=np.ones(grid.dims))
        mask = StructureMask(grid=grid, inside=np.zeros(grid.dims, bool))
        with pytest.raises(InputError):
            compute_dvh(dose, mask)

    def test_grid_mismatch_rejected(self):
        g1 = GridSpec(dims=(4, 4, 4), spacing=1.0, origin=(0, 0, 0))
        g2 = GridSpec(dims=(4, 4, 4), spacing=2.0, origin=(0, 0, 0))
        dose = DoseGrid(grid=g1, dose_gy=np.ones(g1.dims))
        mask = StructureMask(grid=g2, inside=np.ones(g2.dims, bool))
        with pytest.raises(InputError):
            compute_dvh(dose, mask)


class TestDoseAtVolume:
    def test_uniform_170_gives_exact_170(self):
        dvh = make_dvh([170.0] * 100)
        res = dose_at_volume(dvh, 90.0)
        assert res.dose_gy == 170.0
        assert res.fraction_pct == 100.0

    def test_two_voxel_d90_needs_both(self):
        dvh = make_dvh([100.0, 200.0])
        assert dose_at_volume(dvh, 90.0).dose_gy == 100.0

    def test_reporting_pair_carries_achieved_fraction(self, rng):
        doses = rng.uniform(100.0, 220.0, size=400)
        dvh = make_dvh(doses)
        res = dose_at_volume(dvh, 90.0)
        # achieved fraction is the exact coverage at the reported dose
        expected = 100.0 * np.count_nonzero(doses >= res.dose_gy) / len(doses)
        assert res.fraction_pct == pytest.approx(expected)
        assert res.fraction_pct >= 90.0

    def test_nearest_bin_mode_ties_to_higher_dose(self):
        # fractions 100, 50, 50, 0: target 50 is achieved at two edges
        dvh = make_dvh([1.0, 2.5])
        res = dose_at_volume(dvh, 50.0, mode="nearest_bin")
        edges = dvh.dose_edges_gy
        candidates = edges[dvh.fraction_pct == 50.0]
        assert res.dose_gy == candidates.max()

    def test_interp_mode_monotone(self, rng):
        doses = rng.uniform(0.0, 200.0, size=300)
        dvh = make_dvh(doses)
        d95 = dose_at_volume(dvh, 95.0, mode="interp").dose_gy
        d50 = dose_at_volume(dvh, 50.0, mode="interp").dose_gy
        assert d95 <= d50

    def test_exact_scaling_law(self, rng):
        # doubling every voxel dose is exact in floats, so D90 doubles exactly
        doses = rng.uniform(10.0, 200.0, size=257)
        d1 = dose_at_volume(make_dvh(doses), 90.0).dose_gy
        d2 = dose_at_volume(make_dvh(2.0 * doses), 90.0).dose_gy
        assert d2 == 2.0 * d1

    def test_plateau_takes_largest_dose(self):
        # repeated dose values: D90 is still the largest dose with coverage >= 90
        dvh = make_dvh([150.0] * 95 + [40.0] * 5)
        assert dose_at_volume(dvh, 90.0).dose_gy == 150.0

    def test_invalid_fraction_rejected(self):
        dvh = make_dvh([1.0, 2.0])
        for q in (0.0, -5.0, 101.0):
            with pytest.raises(InputError):
                dose_at_volume(dvh, q)


class TestVolumeAtDose:
    def test_uniform_all_covered(self):
        dvh = make_dvh([170.0] * 10)
        assert volume_at_dose(dvh, 160.0).fraction_pct == pytest.approx(100.0)

    def test_two_voxel_half(self):
        dvh = make_dvh([100.0, 200.0])
        assert volume_at_dose(dvh, 160.0).fraction_pct == pytest.approx(50.0)

    def test_within_half_bin_of_counting(self, rng):
        doses = rng.uniform(0.0, 250.0, size=400)
        dvh = make_dvh(doses)
        for d in rng.uniform(0.0, 260.0, size=25):
            exact = 100.0 * np.count_nonzero(doses >= d) / len(doses)
            approx = volume_at_dose(dvh, d).fraction_pct
            # interpolation can be off by at most the fraction step of one bin
            bin_jump = 100.0 * np.max(
                np.abs(np.diff(dvh.fraction_pct))
            ) / 100.0
            assert abs(approx - exact) <= bin_jump + 1e-9

    def test_consistency_with_dose_at_volume(self, rng):
        doses = rng.uniform(50.0, 250.0, size=333)
        dvh = make_dvh(doses)
        for q in (95.0, 90.0, 75.0, 50.0, 20.0):
            d = dose_at_volume(dvh, q).dose_gy
            one_bin = 100.0 / len(doses) + np.max(-np.diff(dvh.fraction_pct))
            assert volume_at_dose(dvh, d).fraction_pct >= q - one_bin


class TestCheckConstraints:
    def all_pass_inputs(self):
        prostate = make_dvh([170.0] * 100)
        urethra = make_dvh([200.0] * 60 + [250.0] * 40, name="urethra")
        rectum = make_dvh([50.0] * 95 + [90.0] * 5, name="rectum")
        return prostate, urethra, rectum

    def test_all_pass(self):
        report = check_constraints(*self.all_pass_inputs())
        assert report.overall_pass
        assert all(c.evaluated for c in report.checks)

    def test_prostate_low_boundary_fails_just_below(self):
        report = check_constraints(make_dvh([159.9] * 100))
        d90_check = report.checks[0]
        assert d90_check.name == "prostate_d90_range"
        assert not d90_check.passed

    def test_prostate_exact_160_passes(self):
        report = check_constraints(make_dvh([160.0] * 100))
        assert report.checks[0].passed

    def test_missing_structure_fails_overall(self):
        prostate, _, rectum = self.all_pass_inputs()
        report = check_constraints(prostate, None, rectum)
        assert not report.overall_pass
        urethra_check = next(c for c in report.checks if "urethra" in c.name)
        assert not urethra_check.evaluated

    def test_rectum_absolute_volume_limit(self):
        # 2 cc of rectum at 170 Gy exceeds the 1.3 cc cap
        rectum = make_dvh([170.0] * 2000 + [20.0] * 2000, name="rectum")
        prostate = make_dvh([170.0] * 100)
        urethra = make_dvh([100.0] * 10, name="urethra")
        report = check_constraints(prostate, urethra, rectum)
        v160 = next(c for c in report.checks if c.name == "rectum_v160_cc")
        assert v160.measured == pytest.approx(2.0, abs=0.01)
        assert not v160.passed


class TestPairedEvaluation:
    def test_table_style_row(self):
        row = PairedEvaluation.from_values("1", "volume_cc", 24.12, 23.05)
        assert row.diff == pytest.approx(-1.07)
        assert row.percent == pytest.approx(-4.44, abs=0.01)

    def test_consistency_invariant(self, rng):
        for _ in range(20):
            us = rng.uniform(10.0, 50.0)
            fused = rng.uniform(10.0, 50.0)
            row = PairedEvaluation.from_values("x", "volume_cc", us, fused)
            assert row.diff == pytest.approx(row.fused_value - row.us_value, abs=0.005)
            assert row.percent == pytest.approx(100 * row.diff / row.us_value, abs=0.005)

    def test_zero_reference_rejected(self):
        with pytest.raises(InputError):
            PairedEvaluation.from_values("x", "volume_cc", 0.0, 1.0)


class TestCompareStructures:
    def test_identical_sets_give_zero_diffs(self):
        stack = cube_stack(side=20.0, offset=-10.0, spacing=2.0)
        grid = GridSpec.from_bounds(*stack.bounds(), spacing=2.0, pad=4.0)
        src = SourceModel()
        plan = SeedPlan("p", [Seed((0.0, 0.0, 10.0), 0.5), Seed((5.0, 5.0, 5.0), 0.5)], src)
        rows = compare_structures(
            {"prostate": stack}, {"prostate": stack}, plan, grid, patient_id="t"
        )
        assert [r.metric for r in rows] == ["volume_cc", "v160_pct", "d90_gy"]
        for row in rows:
            assert row.diff == 0.0
            assert row.percent == 0.0

    def test_missing_prostate_rejected(self):
        stack = cube_stack(side=10.0, spacing=1.0)
        grid = GridSpec.from_bounds(*stack.bounds(), spacing=2.0, pad=4.0)
        plan = SeedPlan("p", [Seed((5.0, 5.0, 5.0), 0.5)])
        with pytest.raises(InputError):
            compare_structures({}, {"prostate": stack}, plan, grid)
