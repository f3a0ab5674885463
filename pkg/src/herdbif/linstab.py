"""Linear stability of the interior equilibrium.

The characteristic function of the (optionally controlled) linearization is

    H(lam) = lam**2 + p1 lam + p2 + exp(-lam varrho) (q1 lam + q2)

with ``p1 = 2u - a11``, ``p2 = -a12 a21 + u**2 - a11 u``, ``q1 = x*`` and
``q2 = u x*``.  It follows from the Jacobian of the model, which
:func:`linearize` checks against finite differences.

A second coefficient source, ``"paper-section-5"``, reproduces the
constant terms ``a11 a22`` and ``-x* a12`` that appear in the original
bifurcation section (with ``a22 = d y*^2 / e``).  Those terms disagree with
the Jacobian and are kept only for side-by-side reports.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .errors import ConsistencyError, InvalidBracket, NoCrossing
from .model import Equilibrium, ModelParams, require_equilibrium, rhs

SOURCES = ("derived", "paper-section-5")
FD_STEP = 1e-6


@dataclass(frozen=True)
class Linearization:
    """Jacobian entries at the interior equilibrium.

    ``a11`` is the instantaneous prey self-term, ``delay_coeff = -x*`` the
    delayed one; ``a22_paper = d y*^2 / e`` is only used by the Lyapunov
    conditions, the dynamics use ``a21 = d^2 y*^2 / e``.
    """

    a11: float
    a12: float
    a21: float
    delay_coeff: float
    a22_paper: float
    x_star: float
    y_star: float
    fd_rel_error: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CharacteristicCoeffs:
    p1: float
    p2: float
    q1: float
    q2: float
    source: str = "derived"
    u: float = 0.0

    def __call__(self, lam, varrho):
        return lam * lam + self.p1 * lam + self.p2 + np.exp(-lam * varrho) * (self.q1 * lam + self.q2)

    def dlam(self, lam, varrho):
        """Derivative of H with respect to lambda."""
        ex = np.exp(-lam * varrho)
        return 2 * lam + self.p1 + ex * (self.q1 - varrho * (self.q1 * lam + self.q2))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class CrossingSet:
    omega0: float
    theta: float
    rho_n: list
    transversal: int
    exists: bool
    coeffs: CharacteristicCoeffs
    dre_dvarrho: float = 0.0
    branch: str = ""
    paper_sign_condition: Optional[bool] = None
    residual: float = 0.0

    def to_dict(self) -> dict:
        out = asdict(self)
        out["rho_n"] = list(map(float, self.rho_n))
        return out


@dataclass
class LyapunovReport:
    """Sufficient (not necessary) delay conditions ``varrho > pi0`` and
    ``pi1 varrho^2 + pi2 varrho + pi3 > 0``."""

    varrho: float
    pi0: Optional[float]
    pi1: float
    pi2: float
    pi3: float
    cond_a: bool
    cond_b: bool
    defined: bool = True

    @property
    def verdict(self) -> bool:
        return self.defined and self.cond_a and self.cond_b

    def to_dict(self) -> dict:
        out = asdict(self)
        out["verdict"] = self.verdict
        return out


@dataclass
class DelayBoundReport:
    eta_plus: Optional[float]
    rho_plus: Optional[float]
    valid: bool
    reason: str
    coeffs: CharacteristicCoeffs

    def to_dict(self) -> dict:
        return asdict(self)


def _fd(f, v, step=FD_STEP):
    if v - step < 0:
        # second-order one-sided difference near the positivity boundary
        return (-3 * f(v) + 4 * f(v + step) - f(v + 2 * step)) / (2 * step)
    return (f(v + step) - f(v - step)) / (2 * step)


def fd_jacobian(params: ModelParams, eq: Equilibrium):
    """Central-difference derivatives of the uncontrolled right-hand side at ``eq``.

    Returns ``(d f1/dx, d f1/dy, d f1/dx_delayed, d f2/dx, d f2/dy)``.
    """
    xs, ys = eq.x_star, eq.y_star
    return (
        _fd(lambda v: rhs((v, ys), xs, params)[0], xs),
        _fd(lambda v: rhs((xs, v), xs, params)[0], ys),
        _fd(lambda v: rhs((xs, ys), v, params)[0], xs),
        _fd(lambda v: rhs((v, ys), xs, params)[1], xs),
        _fd(lambda v: rhs((xs, v), xs, params)[1], ys),
    )


def linearize(params: ModelParams, eq: Optional[Equilibrium] = None, check: bool = True) -> Linearization:
    eq = eq or require_equilibrium(params)
    if not eq.feasible:
        raise ValueError("linearization needs a feasible equilibrium")
    m, p, c, d, e, a = params.as_tuple()
    xs, ys = eq.x_star, eq.y_star
    den = xs**p + c
    a11 = m * p * xs**p * ys / den**2
    a12 = -m * xs / den
    a21 = d * d * ys * ys / e
    err = 0.0
    if check:
        fd = fd_jacobian(params, eq)
        analytic = (a11, a12, -xs, a21, 0.0)
        scale = max(abs(v) for v in analytic)
        for num, exact in zip(fd, analytic):
            ref = abs(exact) if exact != 0.0 else scale
            err = max(err, abs(num - exact) / ref)
        if err > 1e-4:
            raise ConsistencyError(f"Jacobian disagrees with finite differences (rel. error {err:.2e})")
    return Linearization(a11=a11, a12=a12, a21=a21, delay_coeff=-xs,
                         a22_paper=d * ys * ys / e, x_star=xs, y_star=ys, fd_rel_error=err)


def char_coeffs(lin: Linearization, u: float = 0.0, source: str = "derived") -> CharacteristicCoeffs:
    if source == "derived":
        return CharacteristicCoeffs(
            p1=2 * u - lin.a11,
            p2=-lin.a12 * lin.a21 + u * u - lin.a11 * u,
            q1=lin.x_star,
            q2=u * lin.x_star,
            source=source,
            u=u,
        )
    if source == "paper-section-5":
        if u != 0.0:
            raise ValueError("paper-section-5 coefficients are defined for u = 0 only")
        return CharacteristicCoeffs(p1=-lin.a11, p2=lin.a11 * lin.a22_paper, q1=lin.x_star,
                                    q2=-lin.x_star * lin.a12, source=source, u=0.0)
    raise ValueError(f"unknown coefficient source {source!r}; expected one of {SOURCES}")


def characteristic(lam, varrho: float, u: float, lin: Linearization, source: str = "derived"):
    """Evaluate ``H(lam)`` for the controlled linearization (``u = 0``: uncontrolled)."""
    return char_coeffs(lin, u, source)(lam, varrho)


def _newton_root(coeffs, lam, varrho, iters=50):
    for _ in range(iters):
        step = coeffs(lam, varrho) / coeffs.dlam(lam, varrho)
        lam = lam - step
        if abs(step) < 1e-15 * max(1.0, abs(lam)):
            break
    return lam


def _transversality(coeffs, omega0, varrho0, delta=1e-4):
    lam_p = _newton_root(coeffs, 1j * omega0, varrho0 + delta)
    lam_m = _newton_root(coeffs, 1j * omega0, varrho0 - delta)
    return (lam_p.real - lam_m.real) / (2 * delta)


def _polish(coeffs, omega, varrho, iters=30):
    """Damped Newton on (Re H, Im H) = 0 in the unknowns (omega, varrho)."""
    def g(w, r):
        v = coeffs(1j * w, r)
        return np.array([v.real, v.imag])

    cur = g(omega, varrho)
    for _ in range(iters):
        lam = 1j * omega
        hw = 1j * coeffs.dlam(lam, varrho)
        hr = -lam * np.exp(-lam * varrho) * (coeffs.q1 * lam + coeffs.q2)
        J = np.array([[hw.real, hr.real], [hw.imag, hr.imag]])
        try:
            dw, dr = np.linalg.solve(J, -cur)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-6:
            nw, nr = omega + t * dw, varrho + t * dr
            new = g(nw, nr)
            if np.linalg.norm(new) < np.linalg.norm(cur) or np.linalg.norm(cur) < 1e-15:
                break
            t *= 0.5
        else:
            break
        if np.linalg.norm(new) >= np.linalg.norm(cur):
            break
        omega, varrho, cur = nw, nr, new
    return omega, varrho


def _modulus_gap(coeffs, w):
    # |P(iw)|^2 - |Q(iw)|^2: zero exactly where a purely imaginary root can sit
    return (coeffs.p2 - w * w) ** 2 + (coeffs.p1 * w) ** 2 - coeffs.q2**2 - (coeffs.q1 * w) ** 2


def _phase(coeffs, w):
    lam = 1j * w
    ratio = -(lam * lam + coeffs.p1 * lam + coeffs.p2) / (coeffs.q1 * lam + coeffs.q2)
    return (-cmath.phase(ratio)) % (2 * math.pi)


def _numeric_roots(coeffs, n_grid=200):
    hi = 10 * abs(coeffs.p1) + 10
    grid = np.linspace(hi / n_grid, hi, n_grid)
    vals = np.array([_modulus_gap(coeffs, w) for w in grid])
    lo_val = _modulus_gap(coeffs, 1e-12)
    grid = np.concatenate(([1e-12], grid))
    vals = np.concatenate(([lo_val], vals))
    roots = []
    for i in range(len(grid) - 1):
        if vals[i] == 0.0:
            roots.append(grid[i])
        elif vals[i] * vals[i + 1] < 0:
            roots.append(brentq(lambda w: _modulus_gap(coeffs, w), grid[i], grid[i + 1], xtol=1e-15))
    out = []
    for w in roots:
        th = _phase(coeffs, w)
        w, r = _polish(coeffs, w, th / w)
        out.append((w, (w * r) % (2 * math.pi), "numeric"))
    return out


def _closed_form_roots(lin):
    # cos(w varrho) = a11/x*, w^2 -/+ x* s w + a12 a21 = 0 with s = |sin(w varrho)|
    ratio = lin.a11 / lin.x_star
    if abs(ratio) >= 1:
        return []
    s = math.sqrt(1 - ratio * ratio)
    k = -lin.a12 * lin.a21
    xs = lin.x_star
    disc = math.sqrt(xs * xs * s * s + 4 * k)
    base = math.acos(ratio)
    out = []
    w_plus = 0.5 * (xs * s + disc)
    if w_plus > 0:
        out.append((w_plus, base, "sin+"))
    w_minus = 0.5 * (-xs * s + disc)
    if w_minus > 0:
        out.append((w_minus, (2 * math.pi - base) % (2 * math.pi), "sin-"))
    return out


def imaginary_crossings(lin: Linearization, u: float = 0.0, n_max: int = 5,
                        source: str = "derived") -> CrossingSet:
    """Smallest-delay crossing ``lam = i omega0`` and its delay ladder.

    ``rho_n = (theta + 2 n pi) / omega0`` for ``n = 0..n_max``.  The
    transversality sign comes from re-solving the root at ``varrho +- 1e-4``.
    """
    coeffs = char_coeffs(lin, u, source)
    if source == "derived" and u == 0.0:
        roots = _closed_form_roots(lin)
        if not roots:
            raise NoCrossing(f"|a11| = {abs(lin.a11):.6g} >= x* = {lin.x_star:.6g}: no crossing phase")
    else:
        roots = _numeric_roots(coeffs)
        if not roots:
            raise NoCrossing("no positive root of |P(i w)| = |Q(i w)| on the search grid")
    roots = [r for r in roots if r[0] > 0]
    omega0, theta, branch = min(roots, key=lambda r: (r[1] if r[1] > 0 else 2 * math.pi) / r[0])
    if theta == 0.0:
        theta = 2 * math.pi
    rho_n = [(theta + 2 * n * math.pi) / omega0 for n in range(n_max + 1)]
    residual = max(abs(coeffs(1j * omega0, r)) for r in rho_n)
    slope = _transversality(coeffs, omega0, rho_n[0])
    paper_cond = None
    if u == 0.0:
        paper_cond = bool(omega0**2 - lin.a11 * lin.a22_paper > 0)
    return CrossingSet(omega0=float(omega0), theta=float(theta), rho_n=[float(r) for r in rho_n],
                       transversal=int(np.sign(slope)), exists=True, coeffs=coeffs,
                       dre_dvarrho=float(slope), branch=branch,
                       paper_sign_condition=paper_cond, residual=float(residual))


def stability_nodelay(lin: Linearization, u: float = 0.0) -> bool:
    """Routh-Hurwitz test of the delay-free quadratic ``lam^2 + (a1+b1) lam + (a2+b2)``."""
    c = char_coeffs(lin, u)
    return (c.p1 + c.q1) > 0 and (c.p2 + c.q2) > 0


@dataclass
class DelayControlVerdict:
    stable: bool
    omega0: Optional[float]
    im_value: Optional[float]
    residual: float = 0.0

    def __bool__(self):
        return self.stable


def control_stability_test(lin: Linearization, u: float, varrho: float, n_grid: int = 2000) -> DelayControlVerdict:
    """Sign of ``Im H(i w0)`` at the smallest positive zero ``w0`` of ``Re H(i w)``."""
    if varrho <= 0:
        raise ValueError("delay must be positive; use stability_nodelay for varrho = 0")
    c = char_coeffs(lin, u)

    def re_h(w):
        return -w * w + c.p2 + c.q1 * w * math.sin(w * varrho) + c.q2 * math.cos(w * varrho)

    top = 10 * (1 + abs(c.p1) + math.sqrt(abs(c.p2)) + c.q1 + abs(c.q2))
    grid = np.linspace(top / n_grid, top, n_grid)
    prev_w, prev = 0.0, re_h(0.0)
    for w in grid:
        cur = re_h(w)
        if prev == 0.0 and prev_w > 0:
            w0 = prev_w
            break
        if prev * cur < 0:
            w0 = brentq(re_h, prev_w, w, xtol=1e-15, rtol=4 * np.finfo(float).eps)
            break
        prev_w, prev = w, cur
    else:
        return DelayControlVerdict(True, None, None)
    im = c.p1 * w0 + c.q1 * w0 * math.cos(w0 * varrho) - c.q2 * math.sin(w0 * varrho)
    return DelayControlVerdict(im > 0, w0, im, abs(re_h(w0)))


def control_stability_delay(lin: Linearization, u: float, varrho: float) -> bool:
    return control_stability_test(lin, u, varrho).stable


def min_stabilizing_u(lin: Linearization, varrho: float, u_lo: float = 0.0, u_hi: float = 1.0,
                      tol: float = 1e-4) -> float:
    """Bisect for the smallest feedback gain that passes the stability test."""
    def stable(u):
        if varrho == 0:
            return stability_nodelay(lin, u)
        return control_stability_delay(lin, u, varrho)

    if stable(u_lo) or not stable(u_hi):
        raise InvalidBracket(f"gain bracket [{u_lo}, {u_hi}] must be unstable -> stable")
    lo, hi = u_lo, u_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if stable(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def nodelay_threshold(lin: Linearization) -> float:
    """Closed-form gain ``(a11 - x*)/2`` above which the trace condition holds."""
    return 0.5 * (lin.a11 - lin.x_star)


def lyapunov_conditions(lin: Linearization, varrho: float) -> LyapunovReport:
    """Evaluate the delay conditions of the Lyapunov-functional argument.

    Uses ``a22 = d y*^2 / e`` as the stability argument defines it.  The
    conditions are sufficient only, and see the test suite for parameter
    sets where they hold although the equilibrium is unstable.
    """
    a11, a12, a22, xs = lin.a11, lin.a12, lin.a22_paper, lin.x_star
    pi1 = xs * (2 * a11 * a12 + 2 * a12**2 - 0.5 * a11 * a22 - 0.5 * a22**2)
    pi2 = a11 * a12 * xs - a12**2 * xs - 4 * a11 * a12
    pi3 = a11 * a12 * (2 - xs) - 0.5 * a22 * xs * (a11 + a22)
    den = 2 * a12 * xs - a11 - a22
    cond_b = pi1 * varrho**2 + pi2 * varrho + pi3 > 0
    # cancellation to roundoff counts as a zero denominator
    if abs(den) <= 1e-12 * max(abs(2 * a12 * xs), abs(a11), abs(a22)):
        return LyapunovReport(varrho, None, pi1, pi2, pi3, False, cond_b, defined=False)
    pi0 = a12 * xs / den
    return LyapunovReport(varrho, pi0, pi1, pi2, pi3, varrho > pi0, cond_b)


def delay_bound(coeffs: CharacteristicCoeffs) -> DelayBoundReport:
    """Frequency bound ``eta_+`` and the stability-preserving delay length ``rho_+``."""
    p1, p2, q1, q2 = coeffs.p1, coeffs.p2, coeffs.q1, coeffs.q2
    disc = q1 * q1 + 4 * (p2 - abs(q2))
    reasons = []
    eta = rho = None
    if disc < 0:
        reasons.append(f"negative discriminant q1^2 + 4(p2 - |q2|) = {disc:.6g}")
    else:
        eta = 0.5 * (abs(q1) + math.sqrt(disc))
        den = q1 * q1 * eta * eta + q2 * q2
        if den > 0:
            rho = (q1 * (eta * eta - p2) + abs(p1 * q2)) / den
    if q2 == 0.0:
        reasons.append("q2 = 0: the bound divides by q2 and does not apply")
    valid = not reasons and rho is not None and math.isfinite(rho) and rho > 0
    if not reasons and not valid:
        reasons.append(f"non-positive delay bound {rho}")
    return DelayBoundReport(eta_plus=eta, rho_plus=rho, valid=valid,
                            reason="; ".join(reasons) if reasons else "ok", coeffs=coeffs)
