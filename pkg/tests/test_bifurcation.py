import io
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from herdbif.bifurcation import (SweepResult, hopf_criticality, hopf_delay_curve, hopf_nodelay,
                                 lpc_locate, nodelay_eigenvalues, sweep, trace_gap)
from herdbif.dde_sim import History, OutcomeClass, SimOptions
from herdbif.errors import InvalidBracket, NoCrossing
from herdbif.linstab import linearize
from herdbif.model import BASE_PARAMS, interior_point

WINDOWS = {"c": (0.01, 1.0), "d": (0.167, 1.0), "e": (0.05, 0.4), "a": (0.0, 0.5)}


def _values(points, boundary=False):
    return [p.value for p in points if p.boundary == boundary]


def test_hopf_in_c(base):
    pts = hopf_nodelay(base, "c", 0.01, 1.0)
    assert len(pts) == 1 and not pts[0].boundary
    assert pts[0].value == pytest.approx(0.33, abs=1e-10)


def test_hopf_in_d(base):
    pts = hopf_nodelay(base, "d", 0.167, 1.0)
    assert _values(pts) == pytest.approx([0.313114, 0.467374], abs=5e-6)
    assert _values(pts, True) == pytest.approx([1.0], abs=1e-2)


def test_hopf_in_e(base):
    pts = hopf_nodelay(base, "e", 0.05, 0.4)
    assert _values(pts) == pytest.approx([0.171162, 0.255496], abs=1e-5)
    assert _values(pts, True) == pytest.approx([0.08], abs=1e-2)


def test_hopf_in_a(base):
    pts = hopf_nodelay(base, "a", 0.0, 0.5)
    assert _values(pts) == pytest.approx([0.061257, 0.272076], abs=1e-5)
    assert _values(pts, True) == pytest.approx([0.5], abs=1e-2)


def test_hopf_none_in_m(base):
    # the trace does not depend on m
    assert hopf_nodelay(base, "m", 0.2, 5.0) == []


def test_hopf_bad_input(base):
    with pytest.raises(ValueError):
        hopf_nodelay(base, "d", 0.5, 0.4)
    with pytest.raises(ValueError):
        hopf_nodelay(base, "z", 0.1, 0.4)


@pytest.mark.parametrize("name", sorted(WINDOWS))
def test_hopf_point_invariants(base, name):
    for pt in hopf_nodelay(base, name, *WINDOWS[name]):
        params = base.with_value(name, pt.value)
        eq = interior_point(params)
        if pt.boundary:
            assert abs(eq.x_star) < 1e-9
            continue
        lin = linearize(params)
        assert abs(lin.a11 - lin.x_star) < 1e-10
        assert -lin.a12 * lin.a21 > 0
        x, p, c = eq.x_star, params.p, params.c
        assert p * x ** (p - 1) * (1 - x) == pytest.approx(x**p + c, abs=1e-8)
        ev = nodelay_eigenvalues(params)
        assert abs(ev[0].real) < 1e-8 and abs(ev[1].real) < 1e-8
        assert sorted(abs(z.imag) for z in ev) == pytest.approx([pt.omega] * 2, abs=1e-8)


@given(n=st.integers(50, 400))
@settings(max_examples=10, deadline=None)
def test_hopf_seed_invariance(n):
    ref = {k: [round(p.value, 8) for p in hopf_nodelay(BASE_PARAMS, k, *w)] for k, w in WINDOWS.items()}
    got = {k: [round(p.value, 8) for p in hopf_nodelay(BASE_PARAMS, k, *w, n_seeds=n)]
           for k, w in WINDOWS.items()}
    assert got == ref


def test_trace_gap_nan_when_infeasible(base):
    assert math.isnan(trace_gap(base.with_value("d", 2.0)))


def test_hopf_criticality(base):
    pts = {round(p.value, 3): p for p in hopf_nodelay(base, "d", 0.167, 1.0)}
    assert hopf_criticality(base, pts[0.313]) == "supercritical"
    assert hopf_criticality(base, pts[0.467]) == "subcritical"
    assert hopf_criticality(base, pts[1.0]) == "boundary"


def test_lpc_invalid_bracket(base):
    # both ends settle on the cycle
    with pytest.raises(InvalidBracket):
        lpc_locate(base, "d", 0.35, 0.40)


def test_lpc_e_and_monotone_in_tol(base):
    coarse = lpc_locate(base, "e", 0.1705, 0.1715, tol=2e-4)
    fine = lpc_locate(base, "e", 0.1705, 0.1715, tol=5e-5)
    assert coarse.resolved and fine.resolved
    assert coarse.bracket[0] <= fine.value <= coarse.bracket[1]
    assert fine.value == pytest.approx(0.17092059, abs=2e-3)
    assert {coarse.lo_class, coarse.hi_class} == {"Steady", "Periodic"}
    d = fine.to_dict()
    assert d["far_ic"] == {"kind": "constant", "x": 0.195, "y": 0.195}


def _one(base, value, near, far):
    res = sweep(base, "d", value, value + 1e-9, 2, near, far, SimOptions(horizon=5000))
    return res.samples[0]


def test_sweep_d035_cycle(base):
    s = _one(base, 0.35, History.constant(0.4, 0.3), History.constant(0.3, 0.22))
    assert s.near.cls is OutcomeClass.PERIODIC and s.far.cls is OutcomeClass.PERIODIC
    assert s.eig_re > 0 and 0 < s.cycle_min < s.cycle_max
    assert not s.bistable


def test_sweep_d04676_bistable(base):
    s = _one(base, 0.4676, History.constant(0.25, 0.23), History.constant(0.3, 0.24))
    assert s.near.cls is OutcomeClass.STEADY and s.far.cls is OutcomeClass.PERIODIC
    assert s.bistable and s.eig_re < 0


def test_sweep_d05_steady(base):
    s = _one(base, 0.5, None, History.constant(0.4, 0.3))
    assert s.near.cls is OutcomeClass.STEADY and s.far.cls is OutcomeClass.STEADY
    assert math.isnan(s.cycle_min)


def test_sweep_ordering_csv_and_infeasible(base):
    res = sweep(base, "d", 0.9, 1.1, 3, opts=SimOptions(horizon=2000))
    assert [s.value for s in res.samples] == pytest.approx([0.9, 1.0, 1.1])
    assert not res.samples[2].equilibrium.feasible and res.samples[2].near is None
    buf = io.StringIO()
    res.to_csv(buf)
    lines = buf.getvalue().strip().split("\n")
    assert lines[0] == "param,x_star,y_star,eig_re,eig_im,near_class,far_class,cycle_min,cycle_max"
    assert lines[3].split(",")[5] == "Infeasible"
    json.loads(res.to_json())


def test_sweep_parallel_matches_serial(base):
    opts = SimOptions(horizon=2000)
    a = sweep(base, "c", 0.2, 0.5, 4, opts=opts, jobs=1)
    b = sweep(base, "c", 0.2, 0.5, 4, opts=opts, jobs=2)
    assert a.to_json() == b.to_json()


def test_sweep_needs_two_points(base):
    with pytest.raises(ValueError):
        sweep(base, "d", 0.3, 0.4, 1)


def test_hopf_delay_curve(fig1, base):
    cs = hopf_delay_curve(fig1, 4)
    assert len(cs.rho_n) == 5
    assert np.allclose(np.diff(cs.rho_n), 2 * math.pi / cs.omega0, rtol=1e-12)
    with pytest.raises(NoCrossing):
        hopf_delay_curve(base)
