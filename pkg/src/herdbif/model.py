"""Predator-prey model with prey group defence and a generalist predator.

Non-dimensional system (prey ``x``, predator ``y``, delay ``varrho``)::

    x' = x (1 - x(t - varrho)) - m x y / (x**p + c) - u (x - x*)
    y' = (d - e / (x + a)) y**2                    - u (y - y*)

``u = 0`` gives the uncontrolled system.  The functional response
``m x / (x**p + c)`` with ``p > 1`` rises and then falls with prey
density, which is how group defence enters the model.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Optional

import numpy as np

from .errors import InfeasibleEquilibrium

PARAM_NAMES = ("m", "p", "c", "d", "e", "a")
DIMENSIONAL_NAMES = ("R", "K", "M", "C", "D", "E", "A", "p", "tau")


def _check_keys(data: dict, allowed, kind: str):
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ValueError(f"unknown {kind} key(s): {', '.join(unknown)}")
    missing = [k for k in allowed if k not in data]
    if missing:
        raise ValueError(f"missing {kind} key(s): {', '.join(missing)}")


@dataclass(frozen=True)
class DimensionalParams:
    """Parameters of the model in original units.

    R : intrinsic prey growth rate
    K : prey carrying capacity
    M : maximum predation rate
    C : protection given to the prey by the environment
    D : predator reproduction rate
    E : maximum predator death rate
    A : residual loss of predators when prey is scarce
    p : pack-shape exponent, ``p > 1``
    tau : maturation delay of the prey
    """

    R: float
    K: float
    M: float
    C: float
    D: float
    E: float
    A: float
    p: float
    tau: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise ValueError(f"{f.name} must be a finite number, got {v!r}")
            if f.name != "tau" and v <= 0:
                raise ValueError(f"{f.name} must be positive, got {v}")
        if self.tau < 0:
            raise ValueError(f"tau must be non-negative, got {self.tau}")
        if self.p <= 1:
            raise ValueError(f"p must exceed 1 for group defence, got {self.p}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "DimensionalParams":
        _check_keys(data, DIMENSIONAL_NAMES, "dimensional parameter")
        return cls(**{k: float(data[k]) for k in DIMENSIONAL_NAMES})


@dataclass(frozen=True)
class ModelParams:
    """The six non-dimensional parameters ``m, p, c, d, e, a``."""

    m: float
    p: float
    c: float
    d: float
    e: float
    a: float

    def __post_init__(self):
        for name in PARAM_NAMES:
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)) or v <= 0:
                raise ValueError(f"{name} must be a positive finite number, got {v!r}")
        if self.p <= 1:
            raise ValueError(f"p must exceed 1 for group defence, got {self.p}")

    def with_value(self, name: str, value: float) -> "ModelParams":
        if name not in PARAM_NAMES:
            raise ValueError(f"unknown parameter {name!r}; expected one of {PARAM_NAMES}")
        return replace(self, **{name: float(value)})

    def as_tuple(self):
        return (self.m, self.p, self.c, self.d, self.e, self.a)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        _check_keys(data, PARAM_NAMES, "parameter")
        return cls(**{k: float(data[k]) for k in PARAM_NAMES})


# Parameter sets used throughout the numerical section of the model's source study.
FIG1_PARAMS = ModelParams(m=1.2, p=2.0, c=0.3, d=0.5, e=0.2, a=0.2)
BASE_PARAMS = ModelParams(m=1.2, p=2.0, c=0.3, d=0.4, e=0.2, a=0.2)


@dataclass(frozen=True)
class State:
    x: float
    y: float

    def __post_init__(self):
        if self.x < 0 or self.y < 0:
            raise ValueError(f"state must be non-negative, got ({self.x}, {self.y})")

    def __iter__(self):
        return iter((self.x, self.y))


@dataclass(frozen=True)
class Equilibrium:
    x_star: float
    y_star: float
    feasible: bool

    def to_dict(self) -> dict:
        return {"x_star": self.x_star, "y_star": self.y_star, "feasible": self.feasible}


@dataclass(frozen=True)
class BoundednessReport:
    """Parameter conditions under which the delay-free system stays bounded.

    ``cond2`` is evaluated at the equilibrium, where its left side
    ``d - e/(x*+a)`` is identically zero, so it always holds there.
    """

    mu: float
    cond1: bool
    cond1_rhs: float
    cond2: bool
    cond2_lhs: float
    cond2_rhs: float
    bound_x: float
    bound_y: float

    @property
    def holds(self) -> bool:
        return self.cond1 and self.cond2

    def to_dict(self) -> dict:
        out = asdict(self)
        out["holds"] = self.holds
        return out


def nondimensionalize(dp: DimensionalParams):
    """Return ``(ModelParams, varrho)`` for dimensional parameters ``dp``."""
    R, K, p = dp.R, dp.K, dp.p
    params = ModelParams(
        m=dp.M / (R * K ** (p - 1)),
        p=p,
        c=dp.C / K**p,
        d=dp.D * K / R,
        e=dp.E / R,
        a=dp.A / K,
    )
    return params, R * dp.tau


def dimensionalize(params: ModelParams, varrho: float, R: float, K: float) -> DimensionalParams:
    """Inverse of :func:`nondimensionalize` for a chosen growth rate and carrying capacity."""
    p = params.p
    return DimensionalParams(
        R=R,
        K=K,
        M=params.m * R * K ** (p - 1),
        C=params.c * K**p,
        D=params.d * R / K,
        E=params.e * R,
        A=params.a * K,
        p=p,
        tau=varrho / R,
    )


def functional_response(x, params: ModelParams):
    """Predation rate ``m x / (x**p + c)``; accepts scalars or arrays."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValueError("prey density must be non-negative")
    out = params.m * x / (x**params.p + params.c)
    return float(out) if out.ndim == 0 else out


def response_peak(params: ModelParams) -> float:
    """Prey density at which the functional response is largest."""
    return (params.c / (params.p - 1)) ** (1.0 / params.p)


@dataclass
class GroupDefenceReport:
    holds: bool
    failures: list
    peak_estimate: float
    peak_exact: float
    max_response: float


def group_defence_axioms(params: ModelParams, x_max: float = 5.0, n: int = 10001) -> GroupDefenceReport:
    """Check the group-defence shape requirements on a uniform grid over ``[0, x_max]``.

    The response must vanish at zero, be positive and bounded for ``x > 0``,
    and rise then fall with exactly one sign change of its slope.
    """
    if x_max <= 0 or n < 100:
        raise ValueError("need x_max > 0 and n >= 100")
    xs = np.linspace(0.0, x_max, n)
    F = functional_response(xs, params)
    failures = []
    if F[0] != 0.0:
        failures.append(f"F(0) = {F[0]!r}, expected 0")
    bad = np.flatnonzero(F[1:] <= 0)
    if bad.size:
        failures.append(f"F not positive at x = {xs[1 + bad[0]]:.6g}")
    if not np.all(np.isfinite(F)):
        failures.append("F not finite on the grid")
    slope = np.sign(np.diff(F))
    slope = slope[slope != 0]
    changes = np.flatnonzero(slope[1:] != slope[:-1])
    if slope.size == 0 or slope[0] < 0:
        failures.append("F does not increase from zero")
    elif changes.size == 0:
        failures.append(f"no decreasing branch on [0, {x_max}]")
    elif changes.size > 1:
        failures.append(f"slope changes sign {changes.size} times")
    i_peak = int(np.argmax(F))
    return GroupDefenceReport(
        holds=not failures,
        failures=failures,
        peak_estimate=float(xs[i_peak]),
        peak_exact=response_peak(params),
        max_response=float(F.max()),
    )


def interior_point(params: ModelParams) -> Equilibrium:
    """Closed-form interior equilibrium, computed whether or not it is feasible."""
    x = params.e / params.d - params.a
    feasible = 0.0 < x < 1.0
    if x >= 0:
        y = (1.0 - x) * (x**params.p + params.c) / params.m
    else:
        y = math.nan
    return Equilibrium(x_star=x, y_star=y, feasible=feasible)


def equilibrium(params: ModelParams) -> Optional[Equilibrium]:
    """Interior equilibrium ``(e/d - a, (1 - x*)(x*^p + c)/m)``, or ``None`` if infeasible."""
    eq = interior_point(params)
    return eq if eq.feasible else None


def require_equilibrium(params: ModelParams) -> Equilibrium:
    eq = equilibrium(params)
    if eq is None:
        raise InfeasibleEquilibrium(
            f"no interior equilibrium: e/d - a = {params.e / params.d - params.a:.6g} not in (0, 1)"
        )
    return eq


def rhs_core(x, y, xd, m, p, c, d, e, a, u, xs, ys):
    # Plain-float kernel; dde_sim compiles this same function with numba.
    dx = x * (1.0 - xd) - m * x * y / (x**p + c) - u * (x - xs)
    dy = (d - e / (x + a)) * y * y - u * (y - ys)
    return dx, dy


def rhs(state, delayed_x: float, params: ModelParams, u: float = 0.0,
        target: Optional[Equilibrium] = None):
    """Time derivative of ``state`` given the prey density one delay ago.

    With ``u != 0`` the linear feedback ``-u (state - target)`` is added,
    so ``target`` is required.
    """
    x, y = state
    if u != 0.0 and target is None:
        raise ValueError("a target equilibrium is required when u != 0")
    xs, ys = (target.x_star, target.y_star) if target is not None else (0.0, 0.0)
    m, p, c, d, e, a = params.as_tuple()
    return rhs_core(float(x), float(y), float(delayed_x), m, p, c, d, e, a, float(u), xs, ys)


def boundedness_check(params: ModelParams) -> BoundednessReport:
    eq = require_equilibrium(params)
    m, p, c, d, e, a = params.as_tuple()
    xs, ys = eq.x_star, eq.y_star
    mu = min(m, e)
    cond1_rhs = d * xs / (xs**p + c)
    cond2_lhs = d - e / (xs + a)
    cond2_rhs = (d / m) * (xs / ys) ** 2
    return BoundednessReport(
        mu=mu,
        cond1=mu < cond1_rhs,
        cond1_rhs=cond1_rhs,
        cond2=cond2_lhs < cond2_rhs,
        cond2_lhs=cond2_lhs,
        cond2_rhs=cond2_rhs,
        bound_x=1.0,
        bound_y=d * (1.0 + mu) / (m * mu),
    )
