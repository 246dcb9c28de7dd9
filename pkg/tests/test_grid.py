import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reflectctl.grid import (
    Grid2D, GridError, OutOfRange, ScalarField, d1, d2, d11, d12, d22, interp_bilinear, interp_gradient,
    read_field_csv, write_field_csv,
)

G = Grid2D(-1.0, 2.0, -0.5, 1.5, 31, 21)
coef = st.floats(-10, 10)


def field(f, grid=G):
    return ScalarField.from_function(grid, f)


def test_affine_first_derivative_exact():
    np.testing.assert_allclose(d1(field(lambda x1, x2: x1)).values, 1.0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(d2(field(lambda x1, x2: 3 * x2 - x1)).values, 3.0, rtol=0, atol=1e-12)


def test_bilinear_mixed_derivative_exact():
    np.testing.assert_allclose(d12(field(lambda x1, x2: x1 * x2)).values[1:-1, 1:-1], 1.0, atol=1e-11)


def test_quadratic_second_derivative_exact():
    np.testing.assert_allclose(d11(field(lambda x1, x2: x1**2)).values[:, 1:-1], 2.0, atol=1e-10)
    np.testing.assert_allclose(d22(field(lambda x1, x2: x2**2 + x1)).values[1:-1], 2.0, atol=1e-10)


def test_one_sided_edges_exact_for_quadratics():
    f = field(lambda x1, x2: 0.5 * x1**2 - x2**2)
    np.testing.assert_allclose(d11(f).values, 1.0, atol=1e-9)
    np.testing.assert_allclose(d22(f).values, -2.0, atol=1e-9)
    X1, X2 = G.mesh()
    np.testing.assert_allclose(d1(f).values, X1, atol=1e-12)


def test_node_query_returns_stored_value():
    f = field(lambda x1, x2: np.sin(3 * x1) + x2**3)
    for j, i in [(0, 0), (5, 7), (20, 30), (20, 0)]:
        assert interp_bilinear(f, (G.x1[i], G.x2[j])) == f.values[j, i]


@given(a=coef, b=coef, c=coef, d=coef, x=st.floats(-1, 2), y=st.floats(-0.5, 1.5))
def test_bilinear_functions_reproduced(a, b, c, d, x, y):
    f = field(lambda x1, x2: a + b * x1 + c * x2 + d * x1 * x2)
    scale = 1 + abs(a) + 2 * abs(b) + 2 * abs(c) + 4 * abs(d)
    assert interp_bilinear(f, (x, y)) == pytest.approx(a + b * x + c * y + d * x * y, abs=1e-12 * scale)
    np.testing.assert_allclose(interp_gradient(f, (x, y)), [b + d * y, c + d * x], atol=1e-10 * scale)


def test_cell_centre_of_product():
    f = field(lambda x1, x2: x1 * x2)
    xc, yc = 0.5 * (G.x1[3] + G.x1[4]), 0.5 * (G.x2[7] + G.x2[8])
    assert interp_bilinear(f, (xc, yc)) == pytest.approx(xc * yc, abs=1e-14)


def test_query_outside_rectangle_rejected():
    f = field(lambda x1, x2: x1)
    with pytest.raises(OutOfRange):
        interp_bilinear(f, (2.1, 0.0))
    with pytest.raises(OutOfRange):
        interp_gradient(f, (0.0, -0.6))


@given(a=coef, b=coef, k=st.integers(1, 4))
def test_differentiation_is_linear(a, b, k):
    f = field(lambda x1, x2: np.sin(k * x1) * np.cos(x2))
    g = field(lambda x1, x2: x1**3 * x2 + np.exp(x2))
    for op in (d1, d2, d11, d22, d12):
        lhs = op(a * f + b * g).values
        rhs = a * op(f).values + b * op(g).values
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-9 * (1 + abs(a) + abs(b)))


def test_first_derivative_second_order():
    errs = []
    for n in (17, 33, 65):
        grid = Grid2D(0.0, 1.0, 0.0, 1.0, n, n)
        f = field(lambda x1, x2: np.sin(2 * x1) * np.cos(x2), grid)
        X1, X2 = grid.mesh()
        errs.append(np.max(np.abs(d1(f).values - 2 * np.cos(2 * X1) * np.cos(X2))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all((orders >= 1.7) & (orders <= 2.3)), orders


def test_csv_round_trip(tmp_path):
    f = field(lambda x1, x2: np.exp(x1) / 3 + np.pi * x2)
    path = tmp_path / "f.csv"
    write_field_csv(path, f)
    assert path.read_text().splitlines()[0] == "x1,x2,value"
    np.testing.assert_array_equal(read_field_csv(path, G).values, f.values)


def test_grid_validation():
    with pytest.raises(GridError):
        Grid2D(0, 1, 0, 1, 8, 32)
    with pytest.raises(GridError):
        Grid2D(1, 1, 0, 1, 32, 32)
    with pytest.raises(GridError):
        ScalarField(G, np.full(G.shape, np.nan))


def test_refine_keeps_nodes():
    fine = G.refine()
    np.testing.assert_allclose(fine.x1[::2], G.x1, atol=1e-15)
    assert fine.h1 == pytest.approx(G.h1 / 2)
