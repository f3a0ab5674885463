"""Fixed-step integration of the delayed (and feedback-controlled) system.

Classical RK4 on a uniform grid.  The delayed prey density is read from
the stored past with cubic Hermite interpolation built from stored states
and derivatives, at every internal stage time.  The history before ``t = 0``
is sampled onto the same grid, so the whole past lives in one buffer.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline
from scipy.signal import find_peaks

from .errors import InvalidBracket, NonFinite, NonPositiveState
from .model import Equilibrium, ModelParams, require_equilibrium, rhs_core

NEG_TOL = 1e-9
DIVERGENCE_LEVEL = 1e6
MAX_STEPS = 10_000_000

_STATUS_OK, _STATUS_NEGATIVE, _STATUS_NONFINITE, _STATUS_DIVERGED = 0, 1, 2, 3

_rhs = numba.njit(cache=True)(rhs_core)


@numba.njit(cache=True)
def _lookup(X, DX, dphi0, K, pos, h):
    # pos is the fractional buffer index of the requested time.
    if pos < 0.0:
        pos = 0.0
    j = int(math.floor(pos))
    th = pos - j
    if th == 0.0:
        return X[j]
    d0 = DX[j]
    d1 = dphi0 if j + 1 == K else DX[j + 1]
    th2 = th * th
    th3 = th2 * th
    return ((2.0 * th3 - 3.0 * th2 + 1.0) * X[j] + (th3 - 2.0 * th2 + th) * h * d0
            + (-2.0 * th3 + 3.0 * th2) * X[j + 1] + (th3 - th2) * h * d1)


@numba.njit(cache=True)
def _integrate(hx, hdx, dphi0, y0, K, off, delayed, h, n,
               m, p, c, d, e, a, u, xs, ys):
    X = np.empty(K + n + 1)
    DX = np.empty(K + n + 1)
    Y = np.empty(n + 1)
    DY = np.empty(n + 1)
    for i in range(K + 1):
        X[i] = hx[i]
        DX[i] = hdx[i]
    x = hx[K]
    y = y0
    Y[0] = y
    xd = _lookup(X, DX, dphi0, K, off, h) if delayed else x
    k1x, k1y = _rhs(x, y, xd, m, p, c, d, e, a, u, xs, ys)
    DX[K] = k1x
    DY[0] = k1y
    status = 0
    done = 0
    for i in range(n):
        # a predator that would more than double within one step is in the
        # finite-time blow-up of the quadratic growth term
        if h * k1y > y:
            status = 3
            break
        base = i + off
        x2 = x + 0.5 * h * k1x
        y2 = y + 0.5 * h * k1y
        xd = _lookup(X, DX, dphi0, K, base + 0.5, h) if delayed else x2
        k2x, k2y = _rhs(x2, y2, xd, m, p, c, d, e, a, u, xs, ys)
        x3 = x + 0.5 * h * k2x
        y3 = y + 0.5 * h * k2y
        xd = _lookup(X, DX, dphi0, K, base + 0.5, h) if delayed else x3
        k3x, k3y = _rhs(x3, y3, xd, m, p, c, d, e, a, u, xs, ys)
        x4 = x + h * k3x
        y4 = y + h * k3y
        xd = _lookup(X, DX, dphi0, K, base + 1.0, h) if delayed else x4
        k4x, k4y = _rhs(x4, y4, xd, m, p, c, d, e, a, u, xs, ys)
        if max(abs(x2), abs(y2), abs(x3), abs(y3), abs(x4), abs(y4)) > DIVERGENCE_LEVEL:
            status = 3
            break
        x = x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        y = y + h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        X[K + i + 1] = x
        Y[i + 1] = y
        done = i + 1
        if not (math.isfinite(x) and math.isfinite(y)):
            status = 2
            break
        if x < -1e-9 or y < -1e-9:
            status = 1
            break
        xd = _lookup(X, DX, dphi0, K, base + 1.0, h) if delayed else x
        k1x, k1y = _rhs(x, y, xd, m, p, c, d, e, a, u, xs, ys)
        DX[K + i + 1] = k1x
        DY[i + 1] = k1y
        if x > DIVERGENCE_LEVEL or y > DIVERGENCE_LEVEL:
            status = 3
            break
    return X[K:K + done + 1].copy(), DX[K:K + done + 1].copy(), Y[:done + 1].copy(), DY[:done + 1].copy(), status


@dataclass(frozen=True)
class History:
    """Initial function on ``[-varrho, 0]``.

    ``kind`` is ``"constant"`` (``value`` is the state) or ``"sampled"``
    (``times``/``xs``/``ys`` tabulate the curve; optional ``dxs`` holds
    exact prey derivatives, used for Hermite rather than spline interpolation).
    """

    kind: str
    value: tuple = ()
    times: tuple = ()
    xs: tuple = ()
    ys: tuple = ()
    dxs: tuple = ()

    def __post_init__(self):
        if self.kind == "constant":
            x, y = self.value
            if not (x > 0 and y > 0):
                raise ValueError(f"history must be strictly positive, got {self.value}")
        elif self.kind == "sampled":
            t = np.asarray(self.times, dtype=float)
            if t.size < 2 or not np.all(np.diff(t) > 0):
                raise ValueError("sampled history needs >= 2 strictly increasing times")
            if abs(t[-1]) > 1e-12:
                raise ValueError("sampled history must end at t = 0")
            if not (np.all(np.asarray(self.xs) > 0) and np.all(np.asarray(self.ys) > 0)):
                raise ValueError("history must be strictly positive")
            if len(self.xs) != t.size or len(self.ys) != t.size:
                raise ValueError("history columns have mismatched lengths")
        else:
            raise ValueError(f"unknown history kind {self.kind!r}")

    @classmethod
    def constant(cls, x: float, y: float) -> "History":
        return cls("constant", value=(float(x), float(y)))

    @classmethod
    def sampled(cls, times, xs, ys, dxs=None) -> "History":
        return cls("sampled", times=tuple(map(float, times)), xs=tuple(map(float, xs)),
                   ys=tuple(map(float, ys)), dxs=tuple(map(float, dxs)) if dxs is not None else ())

    @classmethod
    def from_trajectory(cls, traj: "Trajectory") -> "History":
        """History for continuing ``traj`` past its last sample."""
        if traj.varrho == 0.0:
            return cls.constant(traj.x[-1], traj.y[-1])
        k = min(len(traj.t), int(math.ceil(traj.varrho / traj.h - 1e-9)) + 2)
        t = traj.t[-k:] - traj.t[-1]
        return cls.sampled(t, traj.x[-k:], traj.y[-k:], traj.dx[-k:])

    def start(self) -> float:
        return 0.0 if self.kind == "constant" else self.times[0]

    def to_dict(self) -> dict:
        if self.kind == "constant":
            return {"kind": "constant", "x": self.value[0], "y": self.value[1]}
        out = {"kind": "sampled", "t": list(self.times), "x": list(self.xs), "y": list(self.ys)}
        if self.dxs:
            out["dx"] = list(self.dxs)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "History":
        kind = data.get("kind", "constant")
        if kind == "constant":
            extra = set(data) - {"kind", "x", "y"}
            if extra:
                raise ValueError(f"unknown history key(s): {', '.join(sorted(extra))}")
            return cls.constant(data["x"], data["y"])
        extra = set(data) - {"kind", "t", "x", "y", "dx"}
        if extra:
            raise ValueError(f"unknown history key(s): {', '.join(sorted(extra))}")
        return cls.sampled(data["t"], data["x"], data["y"], data.get("dx"))

    def _grid(self, K: int, h: float, varrho: float):
        """Prey values/derivatives at ``(k - K) h`` for ``k = 0..K``, left slope at 0, and y(0)."""
        if self.kind == "constant":
            x0, y0 = self.value
            return np.full(K + 1, x0), np.zeros(K + 1), 0.0, y0
        t = np.asarray(self.times)
        if t[0] > -varrho + 1e-12:
            raise ValueError(f"sampled history starts at {t[0]}, must cover [-{varrho}, 0]")
        tg = (np.arange(K + 1) - K) * h
        if self.dxs:
            spl = CubicHermiteSpline(t, self.xs, self.dxs, extrapolate=True)
        else:
            spl = CubicSpline(t, self.xs, extrapolate=True)
        hx = spl(tg)
        hdx = spl(tg, 1)
        if np.any(hx[tg >= -varrho] <= 0):
            raise ValueError("history must be strictly positive")
        return hx, hdx, float(hdx[-1]), float(self.ys[-1])


@dataclass
class Trajectory:
    """Uniform-step solution with stored derivatives for dense output."""

    h: float
    varrho: float
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    diverged: bool = False

    @property
    def states(self) -> np.ndarray:
        return np.column_stack((self.x, self.y))

    @property
    def horizon(self) -> float:
        return float(self.t[-1])

    def interpolate(self, times):
        """Hermite dense output at ``times`` within ``[0, horizon]``; returns ``(x, y)`` arrays."""
        times = np.asarray(times, dtype=float)
        if np.any(times < -1e-12) or np.any(times > self.t[-1] + 1e-12):
            raise ValueError("requested times outside the trajectory")
        xs = CubicHermiteSpline(self.t, self.x, self.dx)(times)
        ys = CubicHermiteSpline(self.t, self.y, self.dy)(times)
        return xs, ys

    def to_csv(self, fh):
        fh.write("t,x,y\n")
        for row in zip(self.t.tolist(), self.x.tolist(), self.y.tolist()):
            fh.write("%.17g,%.17g,%.17g\n" % row)


def default_step(varrho: float) -> float:
    """``min(varrho/20, 0.01)``, rounded down so the delay is a whole number of steps."""
    if varrho <= 0:
        return 0.01
    return varrho / max(20, math.ceil(varrho / 0.01 - 1e-9))


def simulate(params: ModelParams, history: History, varrho: float, u: float = 0.0,
             target: Optional[Equilibrium] = None, horizon: float = 2000.0,
             h: Optional[float] = None) -> Trajectory:
    """Integrate from ``t = 0`` to ``horizon``.

    Raises :class:`NonPositiveState` if a component drops below ``-1e-9``
    (retry with a smaller step) and :class:`NonFinite` on overflow.  A run
    whose state or any Runge-Kutta stage exceeds ``1e6`` stops early and is
    marked ``diverged``, as does a run whose predator would more than double
    within one step (finite-time blow-up of the quadratic growth term).
    """
    if varrho < 0:
        raise ValueError("delay must be non-negative")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if h is None:
        h = default_step(varrho)
    if h <= 0:
        raise ValueError("step must be positive")
    if varrho > 0 and h > varrho / 10 * (1 + 1e-12):
        raise ValueError(f"step {h} exceeds varrho/10 = {varrho / 10}")
    if u != 0.0 and target is None:
        raise ValueError("a target equilibrium is required when u != 0")
    xs, ys = (target.x_star, target.y_star) if target is not None else (0.0, 0.0)

    if horizon / h > MAX_STEPS:
        raise ValueError(f"horizon / h = {horizon / h:.3g} exceeds {MAX_STEPS} steps; "
                         "shorten the horizon or use a larger delay")
    n = int(math.ceil(horizon / h - 1e-9))
    delayed = varrho > 0
    if delayed:
        K = int(math.ceil(varrho / h - 1e-9))
        off = max(0.0, K - varrho / h)
    else:
        K, off = 0, 0.0
    hx, hdx, dphi0, y0 = history._grid(K, h, varrho)
    m, p, c, d, e, a = params.as_tuple()
    X, DX, Y, DY, status = _integrate(hx, hdx, dphi0, y0, K, off, delayed, h, n,
                                      m, p, c, d, e, a, float(u), xs, ys)
    t = np.arange(len(X)) * h
    if status == _STATUS_NEGATIVE:
        raise NonPositiveState(f"state ({X[-1]:.3g}, {Y[-1]:.3g}) below -{NEG_TOL} at t = {t[-1]:.6g}; retry with h/2")
    if status == _STATUS_NONFINITE:
        raise NonFinite(f"non-finite state at t = {t[-1]:.6g}")
    return Trajectory(h=h, varrho=float(varrho), t=t, x=X, y=Y, dx=DX, dy=DY,
                      diverged=status == _STATUS_DIVERGED)


class OutcomeClass(str, enum.Enum):
    STEADY = "Steady"
    PERIODIC = "Periodic"
    BISTABLE = "Bistable-candidate"
    DIVERGED = "Diverged"
    UNDETERMINED = "Undetermined"


@dataclass
class Outcome:
    cls: OutcomeClass
    amplitude: float
    period: float
    final: tuple
    horizon: float = 0.0
    tail_min: float = math.nan
    tail_max: float = math.nan

    def to_dict(self) -> dict:
        def num(v):
            return v if math.isfinite(v) else None

        return {
            "class": self.cls.value,
            "amplitude": num(self.amplitude),
            "period": self.period,
            "final": {"x": self.final[0], "y": self.final[1]},
            "horizon": self.horizon,
            "tail_min": num(self.tail_min),
            "tail_max": num(self.tail_max),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def classify(traj: Trajectory, tail_fraction: float = 0.25, steady_tol: float = 1e-4) -> Outcome:
    """Label the long-run behaviour from the trailing window of ``traj``.

    Peak-to-peak amplitude of ``x`` below ``steady_tol`` is Steady.  Otherwise
    the period is the median spacing of successive maxima; a spread (standard
    deviation) above 20% of that median, or fewer than three maxima, is
    Undetermined.
    """
    if not 0 < tail_fraction < 1:
        raise ValueError("tail_fraction must lie in (0, 1)")
    final = (float(traj.x[-1]), float(traj.y[-1]))
    if traj.diverged or max(traj.x.max(), traj.y.max()) > DIVERGENCE_LEVEL:
        return Outcome(OutcomeClass.DIVERGED, math.inf, 0.0, final, traj.horizon)
    n = len(traj.t)
    if n < 20 or (traj.varrho > 0 and traj.horizon < 10 * traj.varrho):
        raise ValueError("trajectory too short to classify")
    start = int(n * (1 - tail_fraction))
    xt = traj.x[start:]
    lo, hi = float(xt.min()), float(xt.max())
    amp = hi - lo

    def result(cls, period=0.0):
        return Outcome(cls, amp, period, final, traj.horizon, lo, hi)

    if amp < steady_tol:
        return result(OutcomeClass.STEADY)
    peaks, _ = find_peaks(xt)
    if peaks.size < 3:
        return result(OutcomeClass.UNDETERMINED)
    # parabolic refinement of each maximum
    tp = traj.t[start:][peaks].astype(float)
    inner = (peaks > 0) & (peaks < xt.size - 1)
    pk = peaks[inner]
    denom = xt[pk - 1] - 2 * xt[pk] + xt[pk + 1]
    safe = np.where(denom != 0, denom, 1.0)
    tp[inner] += np.where(denom != 0, 0.5 * (xt[pk - 1] - xt[pk + 1]) / safe, 0.0) * traj.h
    spacing = np.diff(tp)
    period = float(np.median(spacing))
    if period <= 0 or float(np.std(spacing)) > 0.2 * period:
        return result(OutcomeClass.UNDETERMINED, period)
    return result(OutcomeClass.PERIODIC, period)


@dataclass
class SimOptions:
    """Integration and classification settings shared by the analysis routines."""

    h: Optional[float] = None
    horizon: float = 2000.0
    tail_fraction: float = 0.25
    steady_tol: float = 1e-4
    max_horizon: float = 300000.0
    rel_tol: float = 1e-3

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("h", "horizon", "tail_fraction", "steady_tol",
                                               "max_horizon", "rel_tol")}


def settle(params: ModelParams, history: History, varrho: float, u: float = 0.0,
           target: Optional[Equilibrium] = None, opts: Optional[SimOptions] = None) -> Outcome:
    """Simulate in chunks of ``opts.horizon`` until the long-run class is clear.

    Near a bifurcation one window cannot tell a slowly decaying oscillation
    from a limit cycle.  Each chunk continues from the previous one and is
    classified on its own tail.  The run stops when a chunk is Steady or
    Diverged, or when two consecutive Periodic chunks have tail amplitudes
    within ``rel_tol`` of each other.  Reaching ``max_horizon`` first gives
    Undetermined.
    """
    opts = opts or SimOptions()
    prev_amp = None
    elapsed = 0.0
    while True:
        traj = simulate(params, history, varrho, u, target, opts.horizon, opts.h)
        elapsed += traj.horizon
        out = classify(traj, opts.tail_fraction, opts.steady_tol)
        out.horizon = elapsed
        if out.cls in (OutcomeClass.STEADY, OutcomeClass.DIVERGED):
            return out
        if out.cls is OutcomeClass.PERIODIC:
            if prev_amp is not None and abs(out.amplitude - prev_amp) <= opts.rel_tol * out.amplitude:
                return out
            prev_amp = out.amplitude
        else:
            prev_amp = None
        if elapsed + opts.horizon > opts.max_horizon + 1e-9:
            out.cls = OutcomeClass.UNDETERMINED
            return out
        history = History.from_trajectory(traj)


def near_history(params: ModelParams, offset: float = 0.02) -> History:
    """Constant history displaced radially from the equilibrium by ``offset`` of its norm."""
    eq = require_equilibrium(params)
    return History.constant(eq.x_star * (1 + offset), eq.y_star * (1 + offset))


def critical_delay_by_simulation(params: ModelParams, varrho_lo: float, varrho_hi: float,
                                 tol: float = 1e-3, history: Optional[History] = None,
                                 u: float = 0.0, opts: Optional[SimOptions] = None) -> float:
    """Bisect on the delay between a Steady and a Periodic long-run outcome.

    The default history is the equilibrium displaced by 2%, so the result
    tracks the loss of local stability.
    """
    opts = opts or SimOptions()
    history = history or near_history(params)
    target = require_equilibrium(params) if u != 0.0 else None

    def label(v):
        return settle(params, history, v, u, target, opts).cls

    lo_cls, hi_cls = label(varrho_lo), label(varrho_hi)
    if lo_cls is not OutcomeClass.STEADY or hi_cls is not OutcomeClass.PERIODIC:
        raise InvalidBracket(f"delay bracket [{varrho_lo}, {varrho_hi}] gives "
                             f"{lo_cls.value} -> {hi_cls.value}, need Steady -> Periodic")
    lo, hi = varrho_lo, varrho_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        cls = label(mid)
        if cls is OutcomeClass.STEADY:
            lo = mid
        elif cls is OutcomeClass.PERIODIC:
            hi = mid
        else:
            break
    return 0.5 * (lo + hi)
