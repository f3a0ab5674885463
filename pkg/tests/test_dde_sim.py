import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from herdbif.dde_sim import (History, OutcomeClass, SimOptions, Trajectory, classify,
                             critical_delay_by_simulation, default_step, near_history, settle,
                             simulate)
from herdbif.errors import InvalidBracket, NonPositiveState
from herdbif.model import ModelParams, boundedness_check, equilibrium


def _synthetic(x, h=0.01):
    t = np.arange(len(x)) * h
    y = np.full_like(x, 0.2)
    z = np.zeros_like(x)
    return Trajectory(h=h, varrho=0.0, t=t, x=x, y=y, dx=z, dy=z)


def test_default_step_aligned():
    assert default_step(0.0) == 0.01
    for rho in (0.05, 0.5, 1.3823, 2.0, 7.3):
        h = default_step(rho)
        assert h <= min(rho / 20, 0.01) + 1e-15
        assert abs(rho / h - round(rho / h)) < 1e-9


@pytest.mark.parametrize("rho", [0.0, 0.5, 2.0])
def test_equilibrium_history_stays_put(fig1, rho):
    eq = equilibrium(fig1)
    traj = simulate(fig1, History.constant(eq.x_star, eq.y_star), rho, horizon=200)
    assert np.max(np.abs(traj.x - eq.x_star)) < 1e-9
    assert np.max(np.abs(traj.y - eq.y_star)) < 1e-9


def test_trajectory_uniform_and_nonnegative(fig1):
    traj = simulate(fig1, History.constant(1.0, 0.3), 0.5, horizon=100)
    assert np.allclose(np.diff(traj.t), traj.h, rtol=0, atol=1e-9)
    assert np.all(np.diff(traj.t) > 0)
    assert traj.x.min() >= 0 and traj.y.min() >= 0
    assert traj.horizon >= 100


def test_fig1_steady_after_settling(fig1):
    out = settle(fig1, History.constant(1.0, 0.3), 0.5)
    assert out.cls is OutcomeClass.STEADY
    assert out.final == pytest.approx((0.2, 0.226667), abs=1e-3)


def test_fig1_single_window_decay_is_slow(fig1):
    # one 2000-unit window still shows ~1.5e-4 of decaying oscillation;
    # twice the window is well inside the tolerance
    short = classify(simulate(fig1, History.constant(1.0, 0.3), 0.5, horizon=2000))
    assert short.amplitude == pytest.approx(1.5e-4, rel=0.1)
    out = classify(simulate(fig1, History.constant(1.0, 0.3), 0.5, horizon=4000))
    assert out.cls is OutcomeClass.STEADY
    assert out.final == pytest.approx((0.2, 0.226667), abs=1e-3)


def test_fig3_periodic(fig1):
    out = classify(simulate(fig1, History.constant(1.0, 0.3), 2.0, horizon=2000))
    assert out.cls is OutcomeClass.PERIODIC
    assert out.period > 0 and out.amplitude >= 1e-4


def test_fig2_bounded_cycle(fig1):
    out = classify(simulate(fig1, History.constant(1.0, 0.3), 1.3823, horizon=2000))
    assert out.cls is OutcomeClass.PERIODIC
    assert 0 < out.tail_min < out.tail_max < 1.5


def test_classify_constant():
    out = classify(_synthetic(np.full(5000, 0.3)))
    assert out.cls is OutcomeClass.STEADY
    assert out.amplitude == 0.0


def test_classify_sine_period():
    t = np.arange(20000) * 0.01
    out = classify(_synthetic(0.3 + 0.05 * np.sin(2 * np.pi * t / 7)))
    assert out.cls is OutcomeClass.PERIODIC
    assert out.period == pytest.approx(7.0, abs=0.1)
    assert out.amplitude == pytest.approx(0.1, rel=1e-3)


def test_classify_irregular_is_undetermined():
    rng = np.random.default_rng(1)
    out = classify(_synthetic(0.3 + 0.05 * rng.standard_normal(20000)))
    assert out.cls is OutcomeClass.UNDETERMINED


def test_classify_diverged():
    x = np.linspace(0.3, 2e6, 1000)
    out = classify(_synthetic(x))
    assert out.cls is OutcomeClass.DIVERGED


def test_classify_preconditions(fig1):
    with pytest.raises(ValueError):
        classify(_synthetic(np.full(10, 0.3)))
    with pytest.raises(ValueError):
        classify(_synthetic(np.full(5000, 0.3)), tail_fraction=1.0)
    traj = simulate(fig1, History.constant(1.0, 0.3), 2.0, horizon=15)
    with pytest.raises(ValueError, match="too short"):
        classify(traj)


def test_outcome_json(fig1):
    out = classify(simulate(fig1, History.constant(1.0, 0.3), 2.0, horizon=500))
    d = out.to_dict()
    assert d["class"] == out.cls.value
    assert set(d) >= {"class", "amplitude", "period", "final"}


def test_simulate_preconditions(fig1):
    h = History.constant(1.0, 0.3)
    with pytest.raises(ValueError):
        simulate(fig1, h, 0.5, h=0.1)  # h > varrho / 10
    with pytest.raises(ValueError):
        simulate(fig1, h, 0.5, horizon=0)
    with pytest.raises(ValueError):
        simulate(fig1, h, -1.0)
    with pytest.raises(ValueError, match="steps"):
        simulate(fig1, h, 1e-200)
    with pytest.raises(ValueError):
        History.constant(0.0, 0.3)


def test_negative_undershoot_is_an_error():
    params = ModelParams(m=20, p=2, c=0.3, d=0.5, e=0.2, a=0.2)
    with pytest.raises(NonPositiveState):
        simulate(params, History.constant(0.5, 5.0), 0.0, horizon=20, h=0.5)


@pytest.mark.parametrize("rho", [0.5, 2.0])
def test_step_halving_order(fig1, rho):
    runs = [simulate(fig1, History.constant(0.3, 0.25), rho, horizon=60, h=rho / 10 / 2**k)
            for k in range(3)]
    e1 = np.max(np.abs(runs[0].x - runs[1].x[::2]))
    e2 = np.max(np.abs(runs[1].x - runs[2].x[::2]))
    assert e1 / e2 >= 8


def test_determinism(fig1):
    a = simulate(fig1, History.constant(1.0, 0.3), 0.7, horizon=300)
    b = simulate(fig1, History.constant(1.0, 0.3), 0.7, horizon=300)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


@given(x0=st.floats(0.01, 2.0), y0=st.floats(0.01, 2.0),
       rho=st.one_of(st.just(0.0), st.floats(0.05, 3.0)))
@settings(max_examples=20, deadline=None)
def test_positivity(fig1, x0, y0, rho):
    traj = simulate(fig1, History.constant(x0, y0), rho, horizon=1000)
    assert traj.x.min() > 0 and traj.y.min() > 0


@given(x0=st.floats(0.01, 3.0), y0=st.floats(0.01, 3.0))
@settings(max_examples=15, deadline=None)
def test_boundedness_without_delay(fig1, x0, y0):
    rep = boundedness_check(fig1)
    assert rep.holds
    traj = simulate(fig1, History.constant(x0, y0), 0.0, horizon=500)
    late = traj.t > 100
    assert traj.x[late].max() <= rep.bound_x + 0.01
    assert traj.y[late].max() <= rep.bound_y + 0.01


def test_sampled_history(fig1):
    t = np.linspace(-1.0, 0.0, 21)
    hist = History.sampled(t, 0.3 + 0.01 * t, np.full(21, 0.2))
    traj = simulate(fig1, hist, 1.0, horizon=50)
    assert traj.x[0] == pytest.approx(0.3)
    assert History.from_dict(hist.to_dict()) == hist
    with pytest.raises(ValueError, match="cover"):
        simulate(fig1, hist, 2.0, horizon=50)


def test_continuation_matches_single_run(fig1):
    whole = simulate(fig1, History.constant(1.0, 0.3), 0.5, horizon=100)
    first = simulate(fig1, History.constant(1.0, 0.3), 0.5, horizon=50)
    rest = simulate(fig1, History.from_trajectory(first), 0.5, horizon=50)
    assert rest.x[-1] == pytest.approx(whole.x[-1], abs=1e-9)


def test_trajectory_csv(fig1):
    traj = simulate(fig1, History.constant(1.0, 0.3), 0.5, horizon=1)
    buf = io.StringIO()
    traj.to_csv(buf)
    lines = buf.getvalue().split("\n")
    assert lines[0] == "t,x,y"
    assert float(lines[1].split(",")[1]) == 1.0
    assert "\r" not in buf.getvalue()


def test_settle_cap_gives_undetermined(base):
    # just past the fold the outer cycle is still shrinking after one chunk
    opts = SimOptions(horizon=2000, max_horizon=2000)
    out = settle(base.with_value("d", 0.4681), History.constant(0.195, 0.195), 0.0, opts=opts)
    assert out.cls is OutcomeClass.UNDETERMINED


def test_critical_delay_invalid_brackets(fig1):
    with pytest.raises(InvalidBracket):
        critical_delay_by_simulation(fig1, 0.1, 0.2)
    with pytest.raises(InvalidBracket):
        critical_delay_by_simulation(fig1, 0.5, 3.0, u=1.0)


def test_near_history(base):
    h = near_history(base)
    assert h.value == pytest.approx((0.306, 0.2275 * 1.02))


def test_predator_blowup_marked_diverged():
    # weak predation lets the quadratic predator term escape in finite time
    params = ModelParams(m=0.29656, p=2.07195, c=1.06096, d=1.84137, e=2.32312, a=0.77969)
    traj = simulate(params, History.constant(1.06, 1.2414), 2.0296, horizon=50)
    assert traj.diverged and traj.t[-1] < 10
    assert traj.x.min() > 0 and np.all(np.isfinite(traj.y))
    assert classify(traj).cls is OutcomeClass.DIVERGED
