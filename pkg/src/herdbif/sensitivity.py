"""Latin hypercube sampling and partial rank correlation coefficients (PRCC)."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .dde_sim import History, SimOptions, simulate
from .errors import DegenerateDesign, HerdbifError, NumericalError
from .model import PARAM_NAMES, ModelParams

log = logging.getLogger(__name__)

DEFAULT_HISTORY = (0.4, 0.3)
MAX_FAILED_FRACTION = 0.10
DEFAULT_TIMES = tuple(float(t) for t in range(10, 101, 10))


@dataclass
class LhsDesign:
    param_names: tuple
    ranges: tuple
    matrix: np.ndarray
    seed: Optional[int]

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def to_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(self.param_names)
        for row in self.matrix:
            w.writerow(["%.17g" % v for v in row])


def lhs_sample(param_names: Sequence[str], ranges, N: int, seed: Optional[int] = None) -> LhsDesign:
    """Latin hypercube design with one point in each of ``N`` equal strata per column.

    Each column gets an independent random ordering of the strata and a
    uniform draw within each.
    """
    names = tuple(param_names)
    ranges = tuple((float(lo), float(hi)) for lo, hi in ranges)
    if N < 2:
        raise ValueError("N must be at least 2")
    if len(ranges) != len(names):
        raise ValueError("need one range per parameter")
    for name, (lo, hi) in zip(names, ranges):
        if not lo < hi:
            raise ValueError(f"degenerate range for {name}: ({lo}, {hi})")
    rng = np.random.default_rng(seed)
    mat = np.empty((N, len(names)))
    for j, (lo, hi) in enumerate(ranges):
        strata = rng.permutation(N)
        u = (strata + rng.uniform(size=N)) / N
        mat[:, j] = lo + u * (hi - lo)
    return LhsDesign(names, ranges, mat, seed)


def nominal_ranges(nominal: ModelParams, fraction: float = 0.25, names=PARAM_NAMES):
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    vals = nominal.to_dict()
    return tuple((vals[k] * (1 - fraction), vals[k] * (1 + fraction)) for k in names)


def _residual(target, others):
    A = np.column_stack([np.ones(len(target)), others])
    coef, *_ = np.linalg.lstsq(A, target, rcond=None)
    return target - A @ coef


def partial_corr(a, b, others) -> float:
    """Pearson correlation of ``a`` and ``b`` after regressing both on ``others``."""
    ra, rb = _residual(a, others), _residual(b, others)
    denom = np.sqrt(np.dot(ra, ra) * np.dot(rb, rb))
    if denom == 0:
        raise DegenerateDesign("residual vector is constant")
    return float(np.clip(np.dot(ra, rb) / denom, -1.0, 1.0))


def prcc(design, outputs) -> np.ndarray:
    """PRCC of each design column against ``outputs``.

    Columns and output are rank-transformed (average ranks for ties).  For
    each column the ranks of that column and of the output are regressed on
    the remaining ranks with an intercept, and the PRCC is the correlation
    of the two residual vectors.
    """
    X = design.matrix if isinstance(design, LhsDesign) else np.asarray(design, dtype=float)
    y = np.asarray(outputs, dtype=float)
    N, P = X.shape
    if y.shape != (N,):
        raise ValueError(f"outputs must have length {N}")
    if N <= P + 2:
        raise ValueError(f"need more than {P + 2} samples for {P} parameters")
    R = np.column_stack([rankdata(X[:, j]) for j in range(P)])
    ry = rankdata(y)
    if np.ptp(ry) == 0:
        raise DegenerateDesign("output ranks are constant")
    for j in range(P):
        if np.ptp(R[:, j]) == 0:
            raise DegenerateDesign(f"rank column {j} is constant")
    # centring first keeps the least-squares problems well conditioned
    R = R - R.mean(axis=0)
    ry = ry - ry.mean()
    return np.array([partial_corr(R[:, j], ry, np.delete(R, j, axis=1)) for j in range(P)])


@dataclass
class PrccResult:
    time_points: np.ndarray
    param_names: tuple
    coefficients: np.ndarray  # shape (len(time_points), n_params)
    output_name: str
    n_used: int = 0
    n_failed: int = 0

    def to_dict(self) -> dict:
        return {
            "output": self.output_name,
            "param_names": list(self.param_names),
            "time_points": [float(t) for t in self.time_points],
            "coefficients": {name: [float(v) for v in self.coefficients[:, j]]
                             for j, name in enumerate(self.param_names)},
            "n_used": self.n_used,
            "n_failed": self.n_failed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("t", "param", "prcc"))
        for i, t in enumerate(self.time_points):
            for j, name in enumerate(self.param_names):
                w.writerow(["%.17g" % t, name, "%.17g" % self.coefficients[i, j]])


def _run_row(args):
    values, names, history, varrho, horizon, h, output, times = args
    params = ModelParams(**dict(zip(names, values)))
    try:
        traj = simulate(params, history, varrho, horizon=horizon, h=h)
    except HerdbifError as exc:
        return None, f"{type(exc).__name__}: {exc}"
    if traj.diverged:
        return None, "diverged"
    series = traj.x if output == "x" else traj.y
    return np.interp(times, traj.t, series), None


def prcc_timeseries(nominal: ModelParams, fraction: float = 0.25, N: int = 200,
                    time_points=None, output: str = "x", varrho: float = 0.0,
                    seed: Optional[int] = 0, history: Optional[History] = None,
                    opts: Optional[SimOptions] = None, jobs: int = 1) -> PrccResult:
    """PRCC of all six parameters against ``x`` or ``y`` at several times.

    Every design row is simulated once up to the last time point.  Rows whose
    simulation fails are dropped with a warning; more than 10% failures is
    an error.
    """
    if output not in ("x", "y"):
        raise ValueError("output must be 'x' or 'y'")
    times = np.asarray(time_points if time_points is not None else DEFAULT_TIMES, dtype=float)
    if times.ndim != 1 or times.size == 0 or np.any(np.diff(times) <= 0) or times[0] < 0:
        raise ValueError("time_points must be non-negative and strictly increasing")
    history = history or History.constant(*DEFAULT_HISTORY)
    opts = opts or SimOptions()
    design = lhs_sample(PARAM_NAMES, nominal_ranges(nominal, fraction), N, seed)
    horizon = float(times[-1])
    tasks = [(tuple(row), PARAM_NAMES, history, varrho, horizon, opts.h, output, times)
             for row in design.matrix]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_row, tasks, chunksize=max(1, N // (4 * jobs))))
    else:
        results = [_run_row(t) for t in tasks]
    ok = [i for i, (vals, _) in enumerate(results) if vals is not None]
    failed = N - len(ok)
    for i, (_, msg) in enumerate(results):
        if msg is not None:
            log.warning("design row %d dropped: %s", i, msg)
    if failed > MAX_FAILED_FRACTION * N:
        raise NumericalError(f"{failed} of {N} simulations failed")
    X = design.matrix[ok]
    Y = np.array([results[i][0] for i in ok])
    coeffs = np.array([prcc(X, Y[:, k]) for k in range(times.size)])
    return PrccResult(times, PARAM_NAMES, coeffs, output, len(ok), failed)
