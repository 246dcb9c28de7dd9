import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reflectctl.grid import ScalarField, interp_bilinear
from reflectctl.hjb import ValueField
from reflectctl.oracle1d import compose_separable
from reflectctl.region import (
    EmptyRow, NotApplicable, NotOnBoundary, OverlappingRegions, RegionError, extract_region, extract_stop_regions,
    fit_free_boundaries, reflection_direction,
)
from reflectctl.suite import BENCHMARKS, get, grid_for


def test_symmetric_problem_has_mirrored_rows(solve_cache):
    vf = solve_cache("separable", 65)
    reg = extract_region(vf, 0.0)
    assert np.max(np.abs(reg.l + reg.r)) <= 2 * vf.grid.h1


@pytest.mark.parametrize("name", sorted(BENCHMARKS))
def test_smaller_eps_region_contains_larger(solve_cache, name):
    vf = solve_cache(name, 65)
    wide, narrow = extract_region(vf, 0.0), extract_region(vf, 0.1)
    ok = ~narrow.degenerate_rows
    assert np.all(wide.l[ok] <= narrow.l[ok]) and np.all(narrow.r[ok] <= wide.r[ok])


@given(e1=st.floats(0.0, 0.5), e2=st.floats(0.0, 0.5))
def test_nesting_for_any_pair_of_levels(solve_cache, e1, e2):
    vf = solve_cache("sum_squares", 33)
    lo, hi = sorted((e1, e2))
    a, b = extract_region(vf, lo), extract_region(vf, hi)
    ok = ~b.degenerate_rows
    assert np.all(a.l[ok] <= b.l[ok]) and np.all(b.r[ok] <= a.r[ok])


def test_separable_boundary_flat_in_x2(solve_cache):
    vf = solve_cache("separable", 65)
    reg = extract_region(vf, 0.0)
    oracle = compose_separable(vf.spec, vf.grid, vf.eps_final)
    rows = slice(3, -3)
    assert np.ptp(reg.r[rows]) <= vf.grid.h1
    assert np.max(np.abs(reg.r[rows] - oracle.controlled.right_bdry)) <= 2 * vf.grid.h1


@pytest.mark.parametrize("name", sorted(BENCHMARKS))
def test_rows_are_single_runs(solve_cache, name):
    assert extract_region(solve_cache(name, 65), 0.0).split_runs == 0


@pytest.mark.parametrize("eps", [0.0, 0.01, 0.1])
def test_boundary_points_sit_on_the_level_set(solve_cache, eps):
    vf = solve_cache("sum_squares", 65)
    reg = extract_region(vf, eps)
    g = vf.Vx1.values
    for j in range(2, vf.grid.n2 - 2):
        for x in (reg.l[j], reg.r[j]):
            if reg.left_at_edge[j] or reg.right_at_edge[j]:
                continue
            i = min(int((x - vf.grid.x1_min) / vf.grid.h1), vf.grid.n1 - 2)
            # squaring a linear interpolant departs from interpolating the square by at most (jump)^2 / 4
            bound = 1e-6 + 0.25 * (g[j, i + 1] - g[j, i]) ** 2
            assert abs(interp_bilinear(vf.Vx1, (x, vf.grid.x2[j])) ** 2 - (1 - eps)) <= bound


def test_stop_masks_structure(solve_cache):
    vf = solve_cache("separable", 65)
    reg = extract_region(vf, 0.0)
    masks = extract_stop_regions(vf)
    X1, _ = vf.grid.mesh()
    delta = masks["delta"]
    assert not np.any(masks["I_minus"] & masks["I_plus"])
    np.testing.assert_array_equal(masks["I_plus"], masks["I_minus"][:, ::-1])
    right = X1 > reg.r[:, None] + delta
    left = X1 < reg.l[:, None] - delta
    assert np.all(masks["I_plus"][right]) and np.all(masks["I_minus"][left])
    deep = (X1 > reg.l[:, None] + delta) & (X1 < reg.r[:, None] - delta) & (np.abs(vf.Vx1.values) < 0.5)
    assert deep.any() and not np.any((masks["I_plus"] | masks["I_minus"])[deep])


def test_reflection_directions(solve_cache):
    vf = solve_cache("separable", 65)
    reg = extract_region(vf, 0.0)
    j = vf.grid.n2 // 3
    x2 = vf.grid.x2[j]
    np.testing.assert_array_equal(reflection_direction(reg, (reg.r[j], x2)), [-1.0, 0.0])
    np.testing.assert_array_equal(reflection_direction(reg, (reg.l[j], x2)), [1.0, 0.0])
    np.testing.assert_array_equal(
        reflection_direction(reg, (reg.r[j], x2)), -reflection_direction(reg, (-reg.r[j], x2))
    )
    with pytest.raises(NotOnBoundary):
        reflection_direction(reg, (0.5 * (reg.l[j] + reg.r[j]), x2))


def test_empty_row_at_zero_eps_is_an_error():
    b = get("separable")
    grid = grid_for(b, 17)
    vf = ValueField.from_values(b.spec, ScalarField.from_function(grid, lambda x1, x2: 2 * x1), 1e-3, 0)
    with pytest.raises(EmptyRow):
        extract_region(vf, 0.0)
    assert extract_region(vf, 0.5).degenerate_rows.all()


def test_overlapping_stop_masks_flag_a_corrupt_solve():
    b = get("separable")
    grid = grid_for(b, 17)
    vf = ValueField.from_values(b.spec, ScalarField.from_function(grid, lambda x1, x2: 50 * x1**2), 1e-3, 0)
    with pytest.raises(OverlappingRegions):
        extract_stop_regions(vf)


def test_free_boundaries_need_degenerate_noise(solve_cache):
    with pytest.raises(NotApplicable):
        fit_free_boundaries(solve_cache("sum_squares", 33))


def test_free_boundaries_band_guard_and_disjointness(solve_cache):
    with pytest.raises(RegionError):
        # the stop band exceeds one at this resolution
        fit_free_boundaries(solve_cache("degenerate", 65))
    fb = fit_free_boundaries(solve_cache("degenerate", 129))
    both = np.isfinite(fb.g1) & np.isfinite(fb.g2)
    assert both.any()
    assert np.all(fb.g1[both] <= fb.g2[both]) and fb.overlap_columns == 0
    assert fb.violation_fraction <= 0.02


def test_row_lookup_interpolates_between_rows(solve_cache):
    vf = solve_cache("sum_squares", 33)
    reg = extract_region(vf, 0.0)
    j = 10
    mid = 0.5 * (reg.x2[j] + reg.x2[j + 1])
    lo, hi = reg.interval(mid)
    assert lo == pytest.approx(0.5 * (reg.l[j] + reg.l[j + 1]))
    assert hi == pytest.approx(0.5 * (reg.r[j] + reg.r[j + 1]))
