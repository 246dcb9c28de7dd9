import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reflectctl.model import (
    PASS, RELAXED, Affine, AssumptionError, Constant, ConvexForm, DiffSquare, DomainError, Linear, ProblemSpec,
    Quadratic, Separable, SoftplusAffine, SpecError, SumSquare, SumSquares, TargetPlusConvex, eval_problem,
    rho_star, spec_from_sections, spec_to_config, validate_assumptions,
)

COSTS = [
    SumSquares(),
    DiffSquare(),
    SumSquare(),
    TargetPlusConvex(2.0, Quadratic(4, -4, 1)),
    TargetPlusConvex(0.0, SoftplusAffine(1.0, 0.0, 0.0)),
    Separable(Quadratic(0, 0, 1), SoftplusAffine(2.0, 0.5, -0.3)),
]


def _spec(cost=None, drift2=None, sigma=None, **kw):
    return ProblemSpec(0.0, -0.2, drift2 or Affine(0.0, 0.0, -1.0), sigma or Constant(1.0), kw.pop("rho", 1.0),
                       cost or SumSquares(), **kw)


def test_rho_star_and_constant_sigma_threshold():
    rep = validate_assumptions(_spec())
    assert rep.rho_star == 6
    assert rep.discount_threshold == pytest.approx(18 * rep.L_bar, rel=1e-15)


def test_uncoupled_affine_drift_passes_all_sign_checks():
    rep = validate_assumptions(_spec())
    for name in ("h_x2_nonneg", "sign_triple_nonpositive", "sign_triple_nonnegative", "sign_conditions"):
        assert rep.status(name) == PASS


def test_sum_square_with_positive_coupling_uses_sign_flip():
    rep = validate_assumptions(_spec(SumSquare(), Affine(0.0, 0.5, -1.0)))
    assert rep.status("sign_conditions") == RELAXED
    assert rep.sign_conditions_ok
    assert not rep.hard_fail


def test_eval_problem_closed_forms():
    pe = eval_problem(_spec(), (1.0, 2.0))
    assert pe.h == 5.0
    np.testing.assert_array_equal(pe.Dh, [2.0, 4.0])
    spec = ProblemSpec(0.0, -1.0, Affine(), Constant(1.0), 1.0, SumSquares())
    assert eval_problem(spec, (3.0, 0.0)).drift_vector[0] == -3.0
    spec = ProblemSpec(0.0, 0.0, ConvexForm(Quadratic(0, 0, 1), -0.5), Constant(1.0), 1.0, SumSquares())
    assert eval_problem(spec, (2.0, 4.0)).drift_vector[1] == 2.0


def test_bad_parameters_rejected():
    with pytest.raises(SpecError):
        _spec(rho=0.0)
    with pytest.raises(SpecError):
        _spec(sigma=Constant(0.0))
    with pytest.raises(SpecError):
        _spec(kappa_plus=-1.0)


def test_linear_sigma_needs_decreasing_cost_near_axis():
    spec = ProblemSpec(0.1, -0.05, Affine(0.2, 0.0, 0.02), Linear(0.1), 1.5, SumSquares())
    with pytest.raises(AssumptionError):
        validate_assumptions(spec, (0.04, 4.0, 0.04, 4.0))


def test_linear_sigma_domain():
    spec = ProblemSpec(0.1, -0.05, Affine(0.2, 0.0, 0.02), Linear(0.1), 1.5, TargetPlusConvex(2.0, Quadratic()))
    with pytest.raises(DomainError):
        eval_problem(spec, (-1.0, 1.0))
    with pytest.raises(AssumptionError):
        validate_assumptions(spec, (-1.0, 4.0, 0.1, 4.0))


@pytest.mark.parametrize("cost", COSTS, ids=lambda c: type(c).__name__)
@settings(max_examples=100)
@given(x1=st.floats(-5, 5), x2=st.floats(-5, 5))
def test_cost_gradient_matches_central_difference(cost, x1, x2):
    step = 1e-5
    c = cost.evaluate(x1, x2)
    fd1 = (cost.evaluate(x1 + step, x2).h - cost.evaluate(x1 - step, x2).h) / (2 * step)
    fd2 = (cost.evaluate(x1, x2 + step).h - cost.evaluate(x1, x2 - step).h) / (2 * step)
    assert abs(fd1 - c.h1) <= 1e-6 * max(1.0, abs(c.h1))
    assert abs(fd2 - c.h2) <= 1e-6 * max(1.0, abs(c.h2))


@pytest.mark.parametrize("cost", COSTS, ids=lambda c: type(c).__name__)
@given(x1=st.floats(-5, 5), x2=st.floats(-5, 5))
def test_cost_hessian_matches_gradient_difference(cost, x1, x2):
    step = 1e-5
    c = cost.evaluate(x1, x2)
    a, b = cost.evaluate(x1 + step, x2), cost.evaluate(x1 - step, x2)
    assert abs((a.h1 - b.h1) / (2 * step) - c.h11) <= 1e-6 * max(1.0, abs(c.h11))
    assert abs((a.h2 - b.h2) / (2 * step) - c.h12) <= 1e-6 * max(1.0, abs(c.h12))


@given(p=st.integers(1, 50))
def test_rho_star_formula(p):
    assert rho_star(p) == p * (2 * p - 1)


@pytest.mark.parametrize("cost", COSTS, ids=lambda c: type(c).__name__)
def test_validation_is_deterministic(cost):
    spec = _spec(cost)
    assert validate_assumptions(spec).to_dict() == validate_assumptions(spec).to_dict()


@pytest.mark.parametrize("spec", [
    _spec(),
    _spec(TargetPlusConvex(0.0, SoftplusAffine(1.0, 0.0, 0.0)), ConvexForm(SoftplusAffine(0.5, 0.0, -0.5), -1.0)),
    ProblemSpec(0.1, -0.05, Affine(0.2, 0.0, 0.02), Linear(0.1), 1.5, TargetPlusConvex(2.0, Quadratic(4, -4, 1)),
                kappa_plus=1.0, kappa_minus=2.0),
])
def test_config_round_trip(spec):
    assert spec_from_sections(spec_to_config(spec)) == spec
    assert spec_from_sections(spec_to_config(spec)).spec_hash() == spec.spec_hash()


def test_unknown_config_key_is_an_error():
    cfg = spec_to_config(_spec())
    cfg["dynamics"]["b13"] = "1.0"
    with pytest.raises(SpecError):
        spec_from_sections(cfg)


def test_softplus_curvature_sign():
    f = SoftplusAffine(1.0, 0.0, 0.0)
    y = np.linspace(-10, 10, 101)
    assert f.convexity == 1 and np.all(f.d2(y) > 0)
    assert SoftplusAffine(-1.0, 0.0, 0.0).convexity == -1
