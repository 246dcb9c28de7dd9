import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reflectctl import kernels
from reflectctl.cost import cost_samples
from reflectctl.dynkin import PSOR_TOL, mc_game_value, second_derivative_mc, solve_game
from reflectctl.region import extract_region
from reflectctl.rng import philox4x64
from reflectctl.sde import simulate_paths

compiled = pytest.mark.skipif("cython" not in kernels.available(), reason="compiled kernels not built")
# transcendental calls may differ in the last bit between libm and numpy
ULP_TOL = 1e-12


def test_backend_selection(monkeypatch):
    monkeypatch.setenv("REFLECT_BACKEND", "python")
    assert kernels.active_name() == "python"
    monkeypatch.setenv("REFLECT_BACKEND", "nonsense")
    with pytest.raises(ValueError):
        kernels.get()
    monkeypatch.delenv("REFLECT_BACKEND")
    assert kernels.active_name() in kernels.available()


@compiled
@given(c=st.tuples(*[st.integers(0, 2**64 - 1)] * 4), k=st.tuples(*[st.integers(0, 2**64 - 1)] * 2))
def test_compiled_philox_block(c, k):
    assert tuple(kernels.get("cython").philox_block(*c, *k)) == tuple(int(w) for w in philox4x64(c, k))


@pytest.fixture(scope="module")
def setup(solve_cache):
    vf = solve_cache("sum_squares", 65)
    return vf, extract_region(vf, 0.01)


@compiled
def test_paths_agree_across_backends(setup):
    vf, reg = setup
    a, b = (simulate_paths(vf.spec, reg, (1.5, 0.5), 1.0, 1e-3, 8, n_paths=6, backend=k)
            for k in ("python", "cython"))
    for p, q in zip(a, b):
        np.testing.assert_allclose(p.X, q.X, rtol=0, atol=ULP_TOL)
        np.testing.assert_allclose(p.xi, q.xi, rtol=0, atol=ULP_TOL)
        assert p.pushes.shape == q.pushes.shape


@compiled
def test_costs_agree_across_backends(setup):
    vf, reg = setup
    family = [reg, extract_region(vf, 0.1)]
    a, b = (cost_samples(vf.spec, family, (0.0, 0.5), 16, 4.0, 1e-3, 2, backend=k) for k in ("python", "cython"))
    np.testing.assert_allclose(a, b, rtol=1e-12)


@compiled
def test_stopping_game_agrees_across_backends(setup):
    vf, _ = setup
    game = solve_game(vf.spec, vf)
    a, b = (mc_game_value(vf.spec, game, (0.0, 0.3), 32, 6.0, 2e-3, 4, backend=k) for k in ("python", "cython"))
    assert a["G_hat"] == pytest.approx(b["G_hat"], rel=1e-12, abs=1e-12)


@compiled
def test_second_derivative_agrees_across_backends(solve_cache):
    vf = solve_cache("degenerate", 129)
    a, b = (second_derivative_mc(vf.spec, vf, (0.0, 0.0), 32, 4.0, 2e-3, 1, backend=k) for k in ("python", "cython"))
    assert a["mean"] == pytest.approx(b["mean"], rel=1e-12, abs=1e-12)


@compiled
def test_projected_sor_agrees_within_tolerance(setup):
    # the fallback sweeps red-black and the compiled loop lexicographically; both stop at the same tolerance
    vf, _ = setup
    a, b = (solve_game(vf.spec, vf, backend=k) for k in ("python", "cython"))
    assert np.max(np.abs(a.U.values - b.U.values)) <= 1e3 * PSOR_TOL
