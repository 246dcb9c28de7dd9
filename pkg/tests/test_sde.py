import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reflectctl.grid import Grid2D
from reflectctl.model import Affine, Constant, ProblemSpec, Quadratic, Separable
from reflectctl.region import extract_region
from reflectctl.sde import (
    RegionLookupOutOfRange, audit_paths, check_time_step, project_initial, resolved_time_step, simulate_paths,
    verify_skorokhod_conditions,
)

BOX = Grid2D(-1.0, 1.0, -6.0, 6.0, 17, 17)


def _bm_spec(a1=0.0, b11=0.0, sigma=1.0):
    # x1 is a drifted Brownian motion, x2 a mean-reverting factor that never touches the box edges
    return ProblemSpec(a1, b11, Affine(0.0, 0.0, -1.0), Constant(sigma), 1.0,
                       Separable(Quadratic(0, 0, 1), Quadratic(0, 0, 1)))


def test_projection_is_identity_inside(band):
    reg = band(BOX, -0.5, 0.5)
    y, jump = project_initial(reg, (0.2, 1.3))
    np.testing.assert_array_equal(y, [0.2, 1.3])
    assert jump == 0.0


def test_projection_from_the_right(band):
    reg = band(BOX, -0.5, 0.5)
    y, jump = project_initial(reg, (1.2, 0.0))
    assert y[0] == 0.5 and y[1] == 0.0
    assert jump == pytest.approx(-0.7, abs=1e-15)


def test_no_contact_means_no_control(band):
    spec = _bm_spec(b11=-1.0, sigma=1e-9)
    reg = band(BOX, -0.5, 0.5)
    for p in simulate_paths(spec, reg, (0.3, 0.0), 2.0, 1e-3, 0, n_paths=4):
        assert np.all(p.v == 0.0) and np.all(p.xi == 0.0)


def test_reflected_bm_variation_matches_fine_step_reference(band):
    # Richardson on the sqrt(dt) bias: 2 m(dt/4) - m(dt) against 2 m(dt/16) - m(dt/4), paired by path index
    spec, reg = _bm_spec(), band(BOX, -0.5, 0.5)
    dt, N = 4e-3, 2000
    m = {}
    for k in (1, 4, 16):
        m[k] = np.array([p.xi[-1] for p in simulate_paths(spec, reg, (0.0, 0.0), 1.0, dt / k, 11, n_paths=N)])
    d = (2 * m[4] - m[1]) - (2 * m[16] - m[4])
    assert abs(d.mean()) <= 3 * d.std(ddof=1) / np.sqrt(N)


def test_stationary_mean_converges_at_half_order(band):
    # reflected BM with drift on [-b, b] has the truncated exponential law with mean b coth(cb) - 1/c, c = 2 a1 / sigma^2
    spec, reg = _bm_spec(a1=1.0), band(BOX, -0.5, 0.5)
    exact = 0.5 / np.tanh(1.0) - 0.5
    errs = []
    for dt in (0.04, 0.01, 0.0025):
        ps = simulate_paths(spec, reg, (0.0, 0.0), 4.0, dt, 7, n_paths=3000, check_dt=False)
        errs.append(np.mean([p.X[len(p.X) // 2:, 0].mean() for p in ps]) - exact)
    errs = np.array(errs)
    order = np.log(errs[0] / errs[-1]) / np.log(16)
    assert errs[0] > errs[1] > errs[2] > 0
    assert 0.35 <= order <= 0.8


@pytest.fixture(scope="module")
def separable_paths(solve_cache):
    vf = solve_cache("separable", 65)
    reg = extract_region(vf, 0.0)
    dt = 2.0 / np.ceil(2.0 / resolved_time_step(vf.spec, vf.grid))
    return vf, reg, simulate_paths(vf.spec, reg, (0.5, 0.5), 2.0, dt, 3, n_paths=100)


def test_audit_passes_on_simulated_paths(separable_paths):
    vf, reg, paths = separable_paths
    rep = audit_paths(paths, reg, vf)
    assert rep.containment == 1.0
    assert rep.pushed_variation > 0
    assert rep.ok, rep.to_dict()


def test_right_boundary_pushes_point_left(separable_paths):
    _, reg, paths = separable_paths
    rows = np.vstack([p.pushes for p in paths])
    right = rows[:, 1] > 0.5 * (np.interp(rows[:, 2], reg.x2, reg.l) + np.interp(rows[:, 2], reg.x2, reg.r))
    assert right.any() and np.all(rows[right, 5] < 0) and np.all(rows[~right, 5] > 0)


def test_corrupted_path_fails_boundary_support(separable_paths):
    vf, reg, paths = separable_paths
    p = paths[0]
    fake = np.array([[k, 0.0, 0.0, 0.0, 0.0, 0.5] for k in range(1, 20)])
    p_bad = type(p)(**{**p.__dict__, "pushes": np.vstack([p.pushes, fake])})
    assert verify_skorokhod_conditions(p, reg, vf).passes["boundary_support"]
    assert not verify_skorokhod_conditions(p_bad, reg, vf).passes["boundary_support"]


@given(seed=st.integers(0, 2**32 - 1), x1=st.floats(-1.0, 1.0), x2=st.floats(-2.0, 2.0))
def test_variation_invariants(band, seed, x1, x2):
    reg = band(BOX, -0.3, 0.4)
    p = simulate_paths(_bm_spec(a1=0.3), reg, (x1, x2), 0.5, 1e-3, seed)[0]
    assert np.all(np.diff(p.xi) >= 0)
    np.testing.assert_allclose(p.xi, p.xi_plus + p.xi_minus, rtol=0, atol=1e-12)
    np.testing.assert_allclose(p.v, p.xi_plus - p.xi_minus, rtol=0, atol=1e-12)
    assert np.all(np.diff(p.xi) >= np.abs(np.diff(p.v)) - 1e-12)
    assert p.xi[0] == pytest.approx(abs(project_initial(reg, (x1, x2))[1]), abs=1e-15)


def test_seed_determinism_across_batches_and_threads(band):
    spec, reg = _bm_spec(a1=0.2), band(BOX, -0.4, 0.4)
    a = simulate_paths(spec, reg, (0.1, 0.5), 1.0, 1e-3, 5, n_paths=8)
    b = simulate_paths(spec, reg, (0.1, 0.5), 1.0, 1e-3, 5, n_paths=8, threads=3)
    c = simulate_paths(spec, reg, (0.1, 0.5), 1.0, 1e-3, 5, n_paths=3)
    for p, q in zip(a, b):
        np.testing.assert_array_equal(p.X, q.X)
        np.testing.assert_array_equal(p.xi, q.xi)
    for p, q in zip(a, c):
        np.testing.assert_array_equal(p.X, q.X)
    assert not np.array_equal(a[0].X, a[1].X)


def test_stride_thins_the_record(band):
    spec, reg = _bm_spec(), band(BOX, -0.4, 0.4)
    full = simulate_paths(spec, reg, (0.0, 0.0), 1.0, 1e-3, 2)[0]
    thin = simulate_paths(spec, reg, (0.0, 0.0), 1.0, 1e-3, 2, stride=10)[0]
    np.testing.assert_array_equal(thin.X, full.X[::10])
    with pytest.raises(ValueError):
        simulate_paths(spec, reg, (0.0, 0.0), 1.0, 1e-3, 2, stride=7)


def test_leaving_the_box_in_x2_is_an_error(band):
    spec = ProblemSpec(0.0, 0.0, Affine(50.0, 0.0, 0.0), Constant(1.0), 1.0, Separable(Quadratic(), Quadratic()))
    with pytest.raises(RegionLookupOutOfRange):
        simulate_paths(spec, band(BOX, -0.4, 0.4), (0.0, 0.0), 1.0, 1e-3, 0)


def test_resolved_step_keeps_tails_inside_a_cell():
    spec = _bm_spec(sigma=2.0)
    dt = resolved_time_step(spec, BOX)
    assert 4 * 2.0 * np.sqrt(dt) == pytest.approx(BOX.h1)


def test_time_step_bound(band):
    reg = band(BOX, -0.4, 0.4)
    check_time_step(_bm_spec(), reg, BOX.h1**2 / 2)
    with pytest.raises(ValueError):
        check_time_step(_bm_spec(), reg, BOX.h1**2)
