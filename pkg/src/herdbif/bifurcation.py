"""Bifurcation structure of the delay-free system.

Hopf points come from the algebraic trace-zero condition of the 2x2
Jacobian, limit points of cycles (LPC) from bisection on the long-run
behaviour of an off-equilibrium initial state, and ``sweep`` tabulates the
data behind one-parameter bifurcation diagrams.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .dde_sim import History, Outcome, OutcomeClass, SimOptions, near_history, settle
from .errors import InvalidBracket
from .linstab import CrossingSet, imaginary_crossings, linearize
from .model import PARAM_NAMES, Equilibrium, ModelParams, interior_point

BOUNDARY_TOL = 1e-6

# Off-equilibrium starting states used for the d, e and a diagrams.
DEFAULT_FAR_IC = {
    "d": (0.195, 0.195),
    "e": (0.195, 0.195),
    "a": (0.24, 0.205),
}
FALLBACK_FAR_IC = (0.4, 0.3)


def default_far_ic(param_name: str) -> History:
    return History.constant(*DEFAULT_FAR_IC.get(param_name, FALLBACK_FAR_IC))


@dataclass
class HopfPoint:
    """A parameter value where the delay-free equilibrium has trace zero.

    ``boundary`` points sit where the equilibrium leaves the feasible region
    (``x* -> 0``); there the determinant vanishes too and ``omega`` is 0.
    """

    param_name: str
    value: float
    omega: float
    boundary: bool = False
    x_star: float = math.nan
    criticality: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "param_name": self.param_name,
            "value": self.value,
            "omega": self.omega,
            "boundary": self.boundary,
            "x_star": self.x_star,
            "criticality": self.criticality,
        }


@dataclass
class LpcPoint:
    param_name: str
    value: float
    bracket: tuple
    far_ic: History
    resolved: bool = True
    lo_class: str = ""
    hi_class: str = ""

    def to_dict(self) -> dict:
        return {
            "param_name": self.param_name,
            "value": self.value,
            "bracket": list(self.bracket),
            "far_ic": self.far_ic.to_dict(),
            "resolved": self.resolved,
            "lo_class": self.lo_class,
            "hi_class": self.hi_class,
        }


@dataclass
class SweepSample:
    value: float
    equilibrium: Equilibrium
    eig_re: float
    eig_im: float
    near: Optional[Outcome]
    far: Optional[Outcome]
    cycle_min: float
    cycle_max: float

    @property
    def bistable(self) -> bool:
        return (self.near is not None and self.far is not None
                and self.near.cls is OutcomeClass.STEADY
                and self.far.cls is OutcomeClass.PERIODIC)

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "equilibrium": self.equilibrium.to_dict(),
            "eig_re": _num(self.eig_re),
            "eig_im": _num(self.eig_im),
            "near": self.near.to_dict() if self.near else None,
            "far": self.far.to_dict() if self.far else None,
            "cycle_min": _num(self.cycle_min),
            "cycle_max": _num(self.cycle_max),
            "bistable": self.bistable,
        }


@dataclass
class SweepResult:
    param_name: str
    samples: list = field(default_factory=list)

    CSV_HEADER = ("param", "x_star", "y_star", "eig_re", "eig_im",
                  "near_class", "far_class", "cycle_min", "cycle_max")

    def to_dict(self) -> dict:
        return {"param_name": self.param_name, "samples": [s.to_dict() for s in self.samples]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.CSV_HEADER)
        for s in self.samples:
            eq = s.equilibrium
            w.writerow([
                _fmt(s.value), _fmt(eq.x_star), _fmt(eq.y_star), _fmt(s.eig_re), _fmt(s.eig_im),
                _label(s.near), _label(s.far), _fmt(s.cycle_min), _fmt(s.cycle_max),
            ])


def _num(v):
    return v if math.isfinite(v) else None


def _fmt(v: float) -> str:
    return "%.17g" % v


def _label(out: Optional[Outcome]) -> str:
    return out.cls.value if out is not None else "Infeasible"


def _check_name(name: str):
    if name not in PARAM_NAMES:
        raise ValueError(f"unknown parameter {name!r}; expected one of {PARAM_NAMES}")


def _try_params(params: ModelParams, name: str, value: float) -> Optional[ModelParams]:
    try:
        return params.with_value(name, value)
    except ValueError:
        return None


def trace_gap(params: ModelParams) -> float:
    """``a11 - x*`` at the interior equilibrium, nan when it is infeasible."""
    eq = interior_point(params)
    if not eq.feasible:
        return math.nan
    x, p, c = eq.x_star, params.p, params.c
    return p * x**p * (1.0 - x) / (x**p + c) - x


def _x_star(params: Optional[ModelParams]) -> float:
    return math.nan if params is None else params.e / params.d - params.a


def _roots_on_grid(f, grid, vals, xtol):
    """Roots of ``f`` bracketed by adjacent finite grid values of opposite sign."""
    roots = []
    for i in range(len(grid) - 1):
        fa, fb = vals[i], vals[i + 1]
        if not (math.isfinite(fa) and math.isfinite(fb)):
            continue
        if fa == 0.0:
            roots.append(float(grid[i]))
        elif fa * fb < 0:
            roots.append(float(brentq(f, grid[i], grid[i + 1], xtol=xtol, rtol=4 * np.finfo(float).eps)))
    if vals[-1] == 0.0:
        roots.append(float(grid[-1]))
    return roots


def _dedupe(values, tol=1e-9):
    out = []
    for v in sorted(values):
        if not out or v - out[-1] > tol:
            out.append(v)
    return out


def hopf_nodelay(params: ModelParams, param_name: str, lo: float, hi: float,
                 n_seeds: int = 200) -> list:
    """Hopf points of the delay-free system as ``param_name`` varies over ``[lo, hi]``.

    The trace ``a11 - x*`` is scanned on ``n_seeds`` points of the feasible
    part of the interval and each sign change is refined with Brent's
    method.  A root is kept when the determinant ``-a12 a21`` is positive.
    Points where ``x*`` reaches 0 make both trace and determinant vanish and
    are reported as boundary points.
    """
    _check_name(param_name)
    if not lo < hi:
        raise ValueError("need lo < hi")
    if n_seeds < 2:
        raise ValueError("n_seeds must be at least 2")
    grid = np.linspace(lo, hi, n_seeds)

    def g(v):
        q = _try_params(params, param_name, v)
        return math.nan if q is None else trace_gap(q)

    def xs(v):
        return _x_star(_try_params(params, param_name, v))

    xvals = [xs(v) for v in grid]
    boundary_vals = []
    for level in (0.0, 1.0):
        shifted = [x - level for x in xvals]
        shifted = [0.0 if abs(v) < 1e-12 else v for v in shifted]
        boundary_vals += _roots_on_grid(lambda v, L=level: xs(v) - L, grid, shifted, 1e-14)
    boundary_vals = _dedupe(boundary_vals)

    points = []
    for v in _roots_on_grid(g, grid, [g(v) for v in grid], 1e-14):
        q = params.with_value(param_name, v)
        lin = linearize(q, check=False)
        det = -lin.a12 * lin.a21
        if det <= 0:
            continue
        near_edge = any(abs(v - b) < BOUNDARY_TOL for b in boundary_vals)
        points.append(HopfPoint(param_name, v, math.sqrt(det), near_edge, lin.x_star))
    for b in boundary_vals:
        q = _try_params(params, param_name, b)
        if q is None or abs(_x_star(q)) > 1e-9:
            continue  # only the x* -> 0 edge is a degenerate Hopf point
        if not any(abs(p.value - b) < BOUNDARY_TOL for p in points):
            points.append(HopfPoint(param_name, b, 0.0, True, _x_star(q)))
    return sorted(points, key=lambda p: p.value)


def hopf_criticality(params: ModelParams, point: HopfPoint, delta: float = 1e-3,
                     opts: Optional[SimOptions] = None) -> str:
    """Empirical label for a non-boundary Hopf point.

    On the side where the equilibrium is unstable, the cycle reached from a
    state next to the equilibrium is measured at distances ``delta`` and
    ``delta / 4`` from the point.  A cycle born at the point has amplitude
    growing like the square root of the distance, so the ratio is near 2
    (supercritical).  A ratio near 1 means the cycle was already there
    (subcritical).
    """
    if point.boundary:
        return "boundary"
    opts = opts or SimOptions(horizon=5000.0)

    def amplitude(q):
        out = settle(q, near_history(q, 0.01), 0.0, opts=opts)
        return out.amplitude if out.cls is OutcomeClass.PERIODIC else math.nan

    for side in (-1.0, 1.0):
        q = _try_params(params, point.param_name, point.value + side * delta)
        if q is None or not trace_gap(q) > 0:
            continue
        q4 = params.with_value(point.param_name, point.value + side * delta / 4)
        ratio = amplitude(q) / amplitude(q4)
        if not math.isfinite(ratio):
            return "undetermined"
        return "supercritical" if ratio > 1.5 else "subcritical"
    return "undetermined"


def lpc_locate(params: ModelParams, param_name: str, lo: float, hi: float,
               far_ic: Optional[History] = None, tol: float = 1e-4,
               opts: Optional[SimOptions] = None) -> LpcPoint:
    """Locate a limit point of cycles by bisection on the far-state outcome.

    The outcome from ``far_ic`` must be Periodic at one end of the bracket and
    Steady at the other.  Bisection stops at width ``tol``, or early with
    ``resolved = False`` when a midpoint cannot be classified.
    """
    _check_name(param_name)
    if not lo < hi:
        raise ValueError("need lo < hi")
    if tol <= 0:
        raise ValueError("tol must be positive")
    far_ic = far_ic or default_far_ic(param_name)
    opts = opts or SimOptions(horizon=5000.0)

    def label(v):
        return settle(params.with_value(param_name, v), far_ic, 0.0, opts=opts).cls

    lo_cls, hi_cls = label(lo), label(hi)
    pair = {lo_cls, hi_cls}
    if pair != {OutcomeClass.PERIODIC, OutcomeClass.STEADY}:
        raise InvalidBracket(f"{param_name} bracket [{lo}, {hi}] gives "
                             f"{lo_cls.value} -> {hi_cls.value}, need Periodic and Steady")
    a, b = lo, hi
    resolved = True
    while b - a > tol:
        mid = 0.5 * (a + b)
        cls = label(mid)
        if cls is lo_cls:
            a = mid
        elif cls is hi_cls:
            b = mid
        else:
            resolved = False
            break
    return LpcPoint(param_name, 0.5 * (a + b), (a, b), far_ic, resolved, lo_cls.value, hi_cls.value)


def nodelay_eigenvalues(params: ModelParams):
    """Eigenvalues of the delay-free Jacobian, leading one first."""
    lin = linearize(params, check=False)
    J = np.array([[lin.a11 - lin.x_star, lin.a12], [lin.a21, 0.0]])
    ev = np.linalg.eigvals(J)
    return sorted(ev, key=lambda z: (-z.real, -z.imag))


def _sweep_sample(args) -> SweepSample:
    params, name, value, near_ic, far_ic, opts = args
    q = params.with_value(name, value)
    eq = interior_point(q)
    if not eq.feasible:
        return SweepSample(value, eq, math.nan, math.nan, None, None, math.nan, math.nan)
    lead = nodelay_eigenvalues(q)[0]
    near = settle(q, near_ic or near_history(q), 0.0, opts=opts)
    far = settle(q, far_ic, 0.0, opts=opts)
    cyc = far if far.cls is OutcomeClass.PERIODIC else near
    if cyc.cls is OutcomeClass.PERIODIC:
        cmin, cmax = cyc.tail_min, cyc.tail_max
    else:
        cmin = cmax = math.nan
    return SweepSample(value, eq, float(lead.real), float(abs(lead.imag)), near, far, cmin, cmax)


def sweep(params: ModelParams, param_name: str, lo: float, hi: float, n: int,
          near_ic: Optional[History] = None, far_ic: Optional[History] = None,
          opts: Optional[SimOptions] = None, jobs: int = 1) -> SweepResult:
    """Tabulate equilibrium, eigenvalues and long-run outcomes on ``n`` values.

    ``near_ic`` defaults to the equilibrium displaced by 2% (recomputed per
    value); ``far_ic`` defaults to a fixed off-equilibrium state.  Samples are
    independent and run in ``jobs`` worker processes; the result order
    follows the parameter values.
    """
    _check_name(param_name)
    if n < 2:
        raise ValueError("n must be at least 2")
    if not lo < hi:
        raise ValueError("need lo < hi")
    far_ic = far_ic or default_far_ic(param_name)
    opts = opts or SimOptions()
    tasks = [(params, param_name, float(v), near_ic, far_ic, opts) for v in np.linspace(lo, hi, n)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            samples = list(pool.map(_sweep_sample, tasks))
    else:
        samples = [_sweep_sample(t) for t in tasks]
    return SweepResult(param_name, samples)


def hopf_delay_curve(params: ModelParams, n_max: int = 5, u: float = 0.0) -> CrossingSet:
    """Critical delays at which a root pair of the delayed system is purely imaginary."""
    return imaginary_crossings(linearize(params), u=u, n_max=n_max)
