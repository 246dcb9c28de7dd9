import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reflectctl.grid import Grid2D
from reflectctl.model import Affine, Constant, ProblemSpec, Quadratic, Separable, SoftplusAffine, SumSquares
from reflectctl.oracle1d import (
    MIN_DENSE, NotSeparable, compose_separable, dense_axis, solve_1d_controlled, solve_1d_uncontrolled,
)


@pytest.fixture(scope="module")
def controlled():
    return solve_1d_controlled(0.0, -0.2, Constant(1.0), 1.0, Quadratic(0, 0, 1))


def test_symmetric_cost_gives_symmetric_boundaries(controlled):
    c = controlled
    h = c.x[1] - c.x[0]
    assert abs(c.left_bdry + c.right_bdry) <= 2 * h
    assert abs(c.left_bdry + c.right_bdry) <= 1e-6
    assert c.left_bdry < 0 < c.right_bdry


def test_value_strictly_convex_between_boundaries(controlled):
    c = controlled
    h = c.x[1] - c.x[0]
    inside = (c.x > c.left_bdry + 2 * h) & (c.x < c.right_bdry - 2 * h)
    second = (c.V[2:] - 2 * c.V[1:-1] + c.V[:-2]) / h**2
    assert np.all(second[inside[1:-1]] > 0)


def test_slope_bounded_by_one(controlled):
    c = controlled
    assert np.max(np.abs(np.diff(c.V) / np.diff(c.x))) <= 1 + 1e-6


def test_boundary_moves_less_than_a_spacing_under_refinement(controlled):
    c = controlled
    fine = solve_1d_controlled(0.0, -0.2, Constant(1.0), 1.0, Quadratic(0, 0, 1), n=2 * MIN_DENSE - 1)
    h = c.x[1] - c.x[0]
    assert abs(fine.right_bdry - c.right_bdry) < h
    assert abs(fine.left_bdry - c.left_bdry) < h


def test_controlled_needs_a_dense_grid():
    with pytest.raises(ValueError):
        solve_1d_controlled(0.0, 0.0, Constant(1.0), 1.0, Quadratic(), n=1025)


@given(c=st.floats(-5, 5), rho=st.floats(0.2, 4))
@settings(max_examples=10)
def test_constant_cost_gives_constant_value(c, rho):
    x, V = solve_1d_uncontrolled(0.3, -1.0, Constant(1.0), rho, Quadratic(c, 0, 0), n=257)
    np.testing.assert_allclose(V, c / rho, rtol=1e-10, atol=1e-10)


@pytest.mark.parametrize("a2,b22,sigma,rho", [(0.0, -1.0, 1.0, 1.0), (0.4, -0.5, 0.7, 2.0), (-1.0, -0.2, 1.5, 1.5)])
def test_ou_quadratic_ansatz(a2, b22, sigma, rho):
    # matching powers of x in rho V - (a2 + b22 x) V' - sigma^2 / 2 V'' = x^2
    alpha = 1 / (rho - 2 * b22)
    beta = 2 * a2 * alpha / (rho - b22)
    gamma = (a2 * beta + sigma**2 * alpha) / rho
    x, V = solve_1d_uncontrolled(a2, b22, Constant(sigma), rho, Quadratic(0, 0, 1))
    # the scheme is exact for quadratics; what remains is round-off from the third-difference end rows
    mid = np.abs(x) <= 2
    np.testing.assert_allclose(V[mid], (alpha * x**2 + beta * x + gamma)[mid], rtol=1e-7, atol=1e-7)


def test_uncontrolled_second_order():
    h2 = SoftplusAffine(2.0, 0.5, -0.3)
    box = (-4.0, 4.0)
    ref_x, ref = solve_1d_uncontrolled(0.0, -1.0, Constant(1.0), 1.0, h2, box=box, n=8 * 512 + 1)
    errs = []
    for n in (129, 257, 513):
        x, V = solve_1d_uncontrolled(0.0, -1.0, Constant(1.0), 1.0, h2, box=box, n=n)
        step = (ref.size - 1) // (n - 1)
        mid = np.abs(x) <= 2
        errs.append(np.max(np.abs(V - ref[::step])[mid]))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders >= 1.7) & (orders <= 2.3)), orders


@pytest.fixture(scope="module")
def composed():
    spec = ProblemSpec(0.0, -0.2, Affine(0.0, 0.0, -1.0), Constant(1.0), 1.0,
                       Separable(Quadratic(0, 0, 1), Quadratic(0, 0, 1)))
    grid = Grid2D(-3.0, 3.0, -5.0, 5.0, 65, 65)
    return grid, compose_separable(spec, grid)


def test_composed_cross_derivative_vanishes(composed):
    _, o = composed
    assert np.all(o.value_field.Vx1x2.values == 0.0)


def test_composition_exact_at_shared_nodes(composed):
    grid, o = composed
    _, s1 = dense_axis(grid.x1_min, grid.x1_max, grid.n1)
    _, s2 = dense_axis(grid.x2_min, grid.x2_max, grid.n2)
    expect = np.add.outer(o.V2[::s2], o.controlled.V[::s1])
    np.testing.assert_array_equal(o.value_field.V.values, expect)


def test_composed_region_rows_all_equal(composed):
    from reflectctl.region import extract_region

    grid, o = composed
    reg = extract_region(o.value_field, 0.0)
    assert np.ptp(reg.l) == 0.0 and np.ptp(reg.r) == 0.0
    assert abs(reg.r[0] - o.controlled.right_bdry) <= grid.h1


def test_coupled_spec_is_not_separable():
    spec = ProblemSpec(0.0, -0.2, Affine(0.0, -0.5, -1.0), Constant(1.0), 1.0, SumSquares())
    with pytest.raises(NotSeparable):
        compose_separable(spec, Grid2D(-1, 1, -1, 1, 17, 17))
