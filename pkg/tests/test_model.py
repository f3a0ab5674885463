import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from herdbif.errors import InfeasibleEquilibrium
from herdbif.model import (DimensionalParams, Equilibrium, ModelParams, boundedness_check,
                           dimensionalize, equilibrium, functional_response, group_defence_axioms,
                           interior_point, nondimensionalize, response_peak, rhs)

pos = st.floats(0.05, 5.0)


@st.composite
def feasible_params(draw):
    """Parameter sets with an interior equilibrium x* in [0.1, 0.9]."""
    m = draw(st.floats(0.2, 3.0))
    p = draw(st.floats(1.1, 4.0))
    c = draw(st.floats(0.05, 2.0))
    d = draw(st.floats(0.1, 2.0))
    a = draw(st.floats(0.01, 1.0))
    x = draw(st.floats(0.1, 0.9))
    return ModelParams(m=m, p=p, c=c, d=d, e=d * (x + a), a=a)


def test_nondimensionalize_identity_scaling():
    dp = DimensionalParams(R=1, K=1, M=1.2, C=0.3, D=0.5, E=0.2, A=0.2, p=2, tau=1)
    params, varrho = nondimensionalize(dp)
    assert params.as_tuple() == pytest.approx((1.2, 2, 0.3, 0.5, 0.2, 0.2), rel=1e-15)
    assert varrho == 1


def test_nondimensionalize_scaled():
    dp = DimensionalParams(R=2, K=2, M=4.8, C=1.2, D=0.5, E=0.4, A=0.4, p=2, tau=0.5)
    params, varrho = nondimensionalize(dp)
    assert params.as_tuple() == pytest.approx((1.2, 2, 0.3, 0.5, 0.2, 0.2), rel=1e-12)
    assert varrho == pytest.approx(1.0)


@given(R=pos, K=pos, M=pos, C=pos, D=pos, E=pos, A=pos, p=st.floats(1.01, 4), tau=st.floats(0, 5))
def test_nondimensionalize_round_trip(R, K, M, C, D, E, A, p, tau):
    dp = DimensionalParams(R=R, K=K, M=M, C=C, D=D, E=E, A=A, p=p, tau=tau)
    back = dimensionalize(*nondimensionalize(dp), R=R, K=K)
    for name, v in dp.to_dict().items():
        assert getattr(back, name) == pytest.approx(v, rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("bad", [{"p": 1.0}, {"p": 0.5}, {"M": 0.0}, {"tau": -1.0}, {"R": math.nan}])
def test_dimensional_rejects_invalid(bad):
    vals = dict(R=1, K=1, M=1.2, C=0.3, D=0.5, E=0.2, A=0.2, p=2, tau=1)
    vals.update(bad)
    with pytest.raises(ValueError):
        DimensionalParams(**vals)


@pytest.mark.parametrize("bad", [{"p": 1.0}, {"c": 0.0}, {"m": -1.0}, {"a": math.inf}])
def test_model_params_reject_invalid(bad):
    vals = dict(m=1.2, p=2, c=0.3, d=0.5, e=0.2, a=0.2)
    vals.update(bad)
    with pytest.raises(ValueError):
        ModelParams(**vals)


def test_params_json_keys(fig1):
    assert ModelParams.from_dict(fig1.to_dict()) == fig1
    with pytest.raises(ValueError, match="unknown"):
        ModelParams.from_dict({**fig1.to_dict(), "q": 1})
    with pytest.raises(ValueError, match="missing"):
        ModelParams.from_dict({"m": 1.2})
    dp = DimensionalParams(R=1, K=1, M=1.2, C=0.3, D=0.5, E=0.2, A=0.2, p=2, tau=1)
    assert set(dp.to_dict()) == {"R", "K", "M", "C", "D", "E", "A", "p", "tau"}
    assert DimensionalParams.from_dict(dp.to_dict()) == dp


def test_functional_response_values(fig1):
    assert functional_response(0.0, fig1) == 0.0
    assert functional_response(1.0, fig1) == pytest.approx(1.2 / 1.3)
    assert response_peak(fig1) == pytest.approx(math.sqrt(0.3))
    with pytest.raises(ValueError):
        functional_response(-0.1, fig1)


@given(m=st.floats(0.1, 5), p=st.floats(1.05, 5), c=st.floats(0.01, 3))
@settings(max_examples=50, deadline=None)
def test_functional_response_unimodal(m, p, c):
    params = ModelParams(m=m, p=p, c=c, d=1, e=0.5, a=0.1)
    peak = response_peak(params)
    xs = np.linspace(0, 3 * peak, 3001)[1:]
    F = functional_response(xs, params)
    i = int(np.argmax(F))
    assert abs(xs[i] - peak) <= 3 * peak / 3000 + 1e-12
    assert np.all(np.diff(F[: i + 1]) >= 0)
    assert np.all(np.diff(F[i:]) <= 0)


def test_group_defence_axioms(fig1):
    rep = group_defence_axioms(fig1)
    assert rep.holds, rep.failures
    assert rep.peak_estimate == pytest.approx(math.sqrt(0.3), abs=1e-3)
    rep = group_defence_axioms(ModelParams(m=1, p=3, c=1, d=0.5, e=0.2, a=0.2))
    assert rep.holds, rep.failures


def test_group_defence_reports_missing_decline():
    # peak beyond the scan window: no decreasing branch seen
    rep = group_defence_axioms(ModelParams(m=1, p=2, c=100, d=0.5, e=0.2, a=0.2), x_max=1.0)
    assert not rep.holds
    assert any("decreasing" in f for f in rep.failures)


def test_monotone_response_rejected():
    with pytest.raises(ValueError, match="p must exceed 1"):
        ModelParams(m=1.2, p=1.0, c=0.3, d=0.5, e=0.2, a=0.2)


def test_equilibrium_values(fig1, base):
    eq = equilibrium(fig1)
    assert (eq.x_star, eq.y_star) == pytest.approx((0.2, 0.226667), abs=1e-6)
    eq = equilibrium(base)
    assert (eq.x_star, eq.y_star) == pytest.approx((0.3, 0.2275), abs=1e-12)


def test_equilibrium_boundary_absent(fig1):
    assert equilibrium(fig1.with_value("d", 1.0)) is None
    assert not interior_point(fig1.with_value("d", 1.0)).feasible
    with pytest.raises(InfeasibleEquilibrium):
        boundedness_check(fig1.with_value("d", 1.0))


@given(feasible_params())
def test_equilibrium_zeroes_rhs(params):
    eq = equilibrium(params)
    assert eq is not None
    dx, dy = rhs((eq.x_star, eq.y_star), eq.x_star, params)
    assert abs(dx) < 1e-12 and abs(dy) < 1e-12
    dx, dy = rhs((eq.x_star, eq.y_star), eq.x_star, params, u=3.0, target=eq)
    assert abs(dx) < 1e-12 and abs(dy) < 1e-12


@given(d=st.floats(0.05, 3), e=st.floats(0.01, 2), a=st.floats(0.001, 2))
def test_feasibility_flag_matches_inequality(d, e, a):
    params = ModelParams(m=1.2, p=2, c=0.3, d=d, e=e, a=a)
    assert interior_point(params).feasible == (0 < e / d - a < 1)
    assert (equilibrium(params) is not None) == (0 < e / d - a < 1)


def test_rhs_direct_evaluation(fig1):
    dx, dy = rhs((1.0, 0.3), 1.0, fig1)
    assert dx == pytest.approx(-1.2 * 0.3 / 1.3)
    assert dy == pytest.approx((0.5 - 0.2 / 1.2) * 0.09)


def test_rhs_control_needs_target(fig1):
    with pytest.raises(ValueError):
        rhs((1.0, 0.3), 1.0, fig1, u=0.5)


def test_boundedness_report(fig1):
    rep = boundedness_check(fig1)
    assert rep.mu == 0.2
    assert rep.cond1_rhs == pytest.approx(0.5 * 0.2 / 0.34)
    assert rep.cond1
    assert rep.cond2_lhs == pytest.approx(0.0, abs=1e-15)
    assert rep.cond2 and rep.holds
    assert rep.bound_x == 1.0
    assert rep.bound_y == pytest.approx(0.5 * 1.2 / (1.2 * 0.2))


def test_equilibrium_dict():
    eq = Equilibrium(0.3, 0.2275, True)
    assert eq.to_dict() == {"x_star": 0.3, "y_star": 0.2275, "feasible": True}
