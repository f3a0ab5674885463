"""Command-line interface: ``herdbif <subcommand> --config run.json [options]``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import io
import json
import math
import os
import re
import sys
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from . import __version__
from .bifurcation import default_far_ic, hopf_criticality, hopf_nodelay, lpc_locate, sweep
from .dde_sim import History, SimOptions, classify, settle, simulate
from .errors import HerdbifError
from .linstab import (char_coeffs, control_stability_test, delay_bound, imaginary_crossings,
                      linearize, lyapunov_conditions, min_stabilizing_u, nodelay_threshold,
                      stability_nodelay)
from .model import (BASE_PARAMS, PARAM_NAMES, DimensionalParams, ModelParams, boundedness_check,
                    interior_point, nondimensionalize, require_equilibrium)
from .sensitivity import DEFAULT_HISTORY, lhs_sample, nominal_ranges, prcc_timeseries

CONFIG_KEYS = ("params", "dimensional", "varrho", "u", "history", "sim", "seed")
SIM_KEYS = tuple(f.name for f in fields(SimOptions))


class UsageError(Exception):
    """Bad command line or configuration (exit code 1)."""


@dataclass
class RunConfig:
    params: ModelParams = BASE_PARAMS
    varrho: float = 0.0
    u: float = 0.0
    history: Optional[History] = None
    sim: SimOptions = field(default_factory=SimOptions)
    seed: int = 0


def _key_line(text: str, key: str) -> int:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else 0


def _unknown(text, path, keys, allowed, where):
    extra = sorted(set(keys) - set(allowed))
    if extra:
        line = _key_line(text, extra[0])
        raise UsageError(f"{path}:{line}: unknown key {extra[0]!r} in {where}; "
                         f"allowed: {', '.join(allowed)}")


def load_config(path: Optional[str]) -> RunConfig:
    """Parse and validate a JSON run configuration; ``None`` gives the defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    if not isinstance(data, dict):
        raise UsageError(f"{path}:1: top level must be an object")
    _unknown(text, path, data, CONFIG_KEYS, "config")

    def fail(key, msg):
        raise UsageError(f"{path}:{_key_line(text, key)}: {key}: {msg}")

    cfg = RunConfig()
    if "params" in data and "dimensional" in data:
        fail("dimensional", "give either params or dimensional, not both")
    try:
        if "params" in data:
            _unknown(text, path, data["params"], PARAM_NAMES, "params")
            cfg.params = ModelParams.from_dict(data["params"])
        if "dimensional" in data:
            cfg.params, cfg.varrho = nondimensionalize(DimensionalParams.from_dict(data["dimensional"]))
            if "varrho" in data:
                fail("varrho", "the delay comes from dimensional.tau; drop varrho")
    except (ValueError, TypeError) as exc:
        fail("params" if "params" in data else "dimensional", str(exc))
    for key in ("varrho", "u"):
        if key in data:
            v = data[key]
            if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                fail(key, "must be a finite number")
            setattr(cfg, key, float(v))
    if cfg.varrho < 0:
        fail("varrho", "must be non-negative")
    if "seed" in data:
        if not isinstance(data["seed"], int) or isinstance(data["seed"], bool):
            fail("seed", "must be an integer")
        cfg.seed = data["seed"]
    if "history" in data:
        try:
            cfg.history = History.from_dict(data["history"])
        except (ValueError, TypeError, KeyError) as exc:
            fail("history", str(exc))
    if "sim" in data:
        if not isinstance(data["sim"], dict):
            fail("sim", "must be an object")
        _unknown(text, path, data["sim"], SIM_KEYS, "sim")
        try:
            cfg.sim = _sim_options(data["sim"])
        except ValueError as exc:
            fail("sim", str(exc))
    return cfg


def _sim_options(values: dict) -> SimOptions:
    out = {}
    for k, v in values.items():
        if v is None and k == "h":
            out[k] = None
            continue
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not v > 0:
            raise ValueError(f"{k} must be a positive number")
        out[k] = float(v)
    opts = SimOptions(**out)
    if not 0 < opts.tail_fraction < 1:
        raise ValueError("tail_fraction must lie in (0, 1)")
    return opts


def apply_overrides(cfg: RunConfig, items) -> RunConfig:
    """Apply ``NAME=VALUE`` overrides: a model parameter, varrho, u, seed or sim.<key>."""
    for item in items or ():
        name, sep, raw = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects NAME=VALUE, got {item!r}")
        try:
            value = float(raw)
        except ValueError:
            raise UsageError(f"--set {name}: {raw!r} is not a number") from None
        try:
            if name in PARAM_NAMES:
                cfg.params = cfg.params.with_value(name, value)
            elif name in ("varrho", "u"):
                if name == "varrho" and value < 0:
                    raise ValueError("varrho must be non-negative")
                setattr(cfg, name, value)
            elif name == "seed":
                cfg.seed = int(value)
            elif name.startswith("sim.") and name[4:] in SIM_KEYS:
                cfg.sim = _sim_options({**cfg.sim.__dict__, name[4:]: value})
            else:
                raise ValueError(f"unknown name; use one of {', '.join(PARAM_NAMES)}, varrho, u, "
                                 f"seed, sim.<{'|'.join(SIM_KEYS)}>")
        except ValueError as exc:
            raise UsageError(f"--set {name}: {exc}") from None
    return cfg


def _clean(obj):
    """Convert to plain JSON types; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), indent=2) + "\n"


def _emit(text: str, path: Optional[str]):
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _csv_text(writer) -> str:
    buf = io.StringIO(newline="")
    writer(buf)
    return buf.getvalue()


def _pair(text: str):
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y, got {text!r}") from None
    return x, y


def _floats(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _history(cfg: RunConfig, default) -> History:
    return cfg.history if cfg.history is not None else default


# subcommands ---------------------------------------------------------------

def cmd_simulate(cfg, args):
    params = cfg.params
    history = _history(cfg, History.constant(1.0, 0.3))
    target = require_equilibrium(params) if cfg.u != 0.0 else None
    if args.settle:
        out = settle(params, history, cfg.varrho, cfg.u, target, cfg.sim)
        traj = None
    else:
        traj = simulate(params, history, cfg.varrho, cfg.u, target, cfg.sim.horizon, cfg.sim.h)
        out = classify(traj, cfg.sim.tail_fraction, cfg.sim.steady_tol)
    if args.trajectory:
        if traj is None:
            raise UsageError("--trajectory cannot be combined with --settle")
        _emit(_csv_text(traj.to_csv), args.trajectory)
    _emit(dumps(out.to_dict()), args.out)


def cmd_equilibrium(cfg, args):
    _emit(dumps(interior_point(cfg.params).to_dict()), args.out)


def cmd_stability(cfg, args):
    lin = linearize(cfg.params)
    report = {
        "linearization": lin.to_dict(),
        "nodelay_stable": stability_nodelay(lin, cfg.u),
        "boundedness": boundedness_check(cfg.params).to_dict(),
        "lyapunov": lyapunov_conditions(lin, cfg.varrho).to_dict(),
    }
    _emit(dumps(report), args.out)


def _crossing_or_error(lin, u, n_max, source):
    try:
        return imaginary_crossings(lin, u, n_max, source).to_dict()
    except HerdbifError as exc:
        return {"exists": False, "error": type(exc).__name__, "message": str(exc)}


def cmd_crossings(cfg, args):
    lin = linearize(cfg.params)
    result = imaginary_crossings(lin, cfg.u, args.n_max).to_dict()
    if args.paper_mode:
        result = {"derived": result,
                  "paper-section-5": _crossing_or_error(lin, cfg.u, args.n_max, "paper-section-5")}
    _emit(dumps(result), args.out)


def cmd_delay_bound(cfg, args):
    lin = linearize(cfg.params)
    out = {src: delay_bound(char_coeffs(lin, cfg.u, src)).to_dict()
           for src in ("derived", "paper-section-5") if src == "derived" or cfg.u == 0.0}
    _emit(dumps(out), args.out)


def cmd_hopf(cfg, args):
    points = hopf_nodelay(cfg.params, args.param, args.lo, args.hi, args.n_seeds)
    if args.criticality:
        for p in points:
            p.criticality = hopf_criticality(cfg.params, p, opts=cfg.sim)
    _emit(dumps([p.to_dict() for p in points]), args.out)


def _lpc_opts(cfg):
    return cfg.sim if cfg.sim.horizon >= 5000 else SimOptions(**{**cfg.sim.__dict__, "horizon": 5000.0})


def cmd_lpc(cfg, args):
    far = History.constant(*args.far) if args.far else _history(cfg, default_far_ic(args.param))
    point = lpc_locate(cfg.params, args.param, args.lo, args.hi, far, args.tol, _lpc_opts(cfg))
    _emit(dumps(point.to_dict()), args.out)


def cmd_sweep(cfg, args):
    far = History.constant(*args.far) if args.far else _history(cfg, default_far_ic(args.param))
    near = History.constant(*args.near) if args.near else None
    result = sweep(cfg.params, args.param, args.lo, args.hi, args.n, near, far, cfg.sim, args.jobs)
    if args.json:
        _emit(dumps(result.to_dict()), args.json)
    _emit(_csv_text(result.to_csv), args.out)


def cmd_control(cfg, args):
    lin = linearize(cfg.params)
    eq = require_equilibrium(cfg.params)
    out = {"varrho": cfg.varrho, "nodelay_threshold": nodelay_threshold(lin)}
    out["min_stabilizing_u"] = min_stabilizing_u(lin, cfg.varrho, args.u_lo, args.u_hi, args.tol)
    history = _history(cfg, History.constant(0.4, 0.26))
    verdicts = []
    for u in args.u or ():
        if cfg.varrho > 0:
            test = control_stability_test(lin, u, cfg.varrho)
            entry = {"u": u, "stable": test.stable, "omega0": test.omega0, "im_value": test.im_value}
        else:
            entry = {"u": u, "stable": stability_nodelay(lin, u)}
        if args.simulate:
            entry["simulation"] = settle(cfg.params, history, cfg.varrho, u, eq, cfg.sim).to_dict()
        verdicts.append(entry)
    out["verdicts"] = verdicts
    if args.scan:
        lo, hi, n = args.scan
        scan = []
        for u in np.linspace(lo, hi, int(n)):
            test = control_stability_test(lin, float(u), cfg.varrho) if cfg.varrho > 0 else None
            if test is None:
                scan.append({"u": float(u), "omega0": None, "im_value": None,
                             "stable": stability_nodelay(lin, float(u))})
            else:
                scan.append({"u": float(u), "omega0": test.omega0, "im_value": test.im_value,
                             "stable": test.stable})
        out["scan"] = scan
    _emit(dumps(out), args.out)


def cmd_prcc(cfg, args):
    history = _history(cfg, History.constant(*DEFAULT_HISTORY))
    times = args.times if args.times else None
    result = prcc_timeseries(cfg.params, args.fraction, args.n, times, args.output, cfg.varrho,
                             cfg.seed, history, cfg.sim, args.jobs)
    if args.design:
        design = lhs_sample(PARAM_NAMES, nominal_ranges(cfg.params, args.fraction), args.n, cfg.seed)
        _emit(_csv_text(design.to_csv), args.design)
    if args.json:
        _emit(dumps(result.to_dict()), args.json)
    _emit(_csv_text(result.to_csv), args.out)


# parser --------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _default_jobs() -> int:
    raw = os.environ.get("HERDBIF_JOBS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration (see docs/config.md)")
    common.add_argument("--set", action="append", metavar="NAME=VALUE", default=[],
                        help="override a config value: a model parameter, varrho, u, seed or "
                             "sim.<key>; repeatable, applied after --config")
    common.add_argument("--out", metavar="PATH", help="main output file (default: stdout)")

    parser = _Parser(prog="herdbif", description="Delayed predator-prey model with prey group "
                     "defence: simulation, stability, bifurcation and sensitivity analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    def add_jobs(p):
        p.add_argument("--jobs", type=int, default=_default_jobs(),
                       help="worker processes (default: $HERDBIF_JOBS or 1)")

    p = add("simulate", cmd_simulate, "integrate the model and classify the long-run outcome")
    p.add_argument("--trajectory", metavar="PATH", help="write the trajectory CSV (t,x,y) here")
    p.add_argument("--settle", action="store_true",
                   help="continue in chunks of sim.horizon until the outcome is clear")

    add("equilibrium", cmd_equilibrium, "interior equilibrium")
    add("stability", cmd_stability, "linearization, delay-free verdict and delay conditions")

    p = add("crossings", cmd_crossings, "critical delays where roots cross the imaginary axis")
    p.add_argument("--n-max", type=int, default=5, help="highest branch index n (default 5)")
    p.add_argument("--paper-mode", action="store_true",
                   help="also report the alternative published coefficient set")

    add("delay-bound", cmd_delay_bound, "stability-preserving delay length for both coefficient sets")

    def add_param(p):
        p.add_argument("--param", required=True, choices=PARAM_NAMES, help="parameter to vary")
        p.add_argument("--lo", type=float, required=True, help="lower end of the range")
        p.add_argument("--hi", type=float, required=True, help="upper end of the range")

    p = add("hopf", cmd_hopf, "Hopf points of the delay-free system in one parameter")
    add_param(p)
    p.add_argument("--n-seeds", type=int, default=200, help="scan points (default 200)")
    p.add_argument("--criticality", action="store_true",
                   help="label each point super- or subcritical by simulation")

    p = add("lpc", cmd_lpc, "limit point of cycles by bisection on the far-state outcome")
    add_param(p)
    p.add_argument("--tol", type=float, default=1e-4, help="final bracket width (default 1e-4)")
    p.add_argument("--far", type=_pair, metavar="X,Y",
                   help="constant far initial state (default: config history or built-in)")

    p = add("sweep", cmd_sweep, "bifurcation-diagram data over a parameter range (CSV)")
    add_param(p)
    p.add_argument("--n", type=int, default=50, help="number of parameter values (default 50)")
    p.add_argument("--near", type=_pair, metavar="X,Y",
                   help="constant near initial state (default: equilibrium + 2%%)")
    p.add_argument("--far", type=_pair, metavar="X,Y", help="constant far initial state")
    p.add_argument("--json", metavar="PATH", help="also write the full result as JSON")
    add_jobs(p)

    p = add("control", cmd_control, "feedback-control thresholds and verdicts")
    p.add_argument("--u", type=_floats, metavar="U1,U2,...", help="gains to test")
    p.add_argument("--u-lo", type=float, default=0.0, help="threshold search lower gain (default 0)")
    p.add_argument("--u-hi", type=float, default=1.0, help="threshold search upper gain (default 1)")
    p.add_argument("--tol", type=float, default=1e-4, help="threshold bisection width (default 1e-4)")
    p.add_argument("--simulate", action="store_true",
                   help="confirm each verdict with a controlled simulation")
    p.add_argument("--scan", type=_floats, metavar="LO,HI,N",
                   help="tabulate omega0 and Im H(i omega0) over N gains")

    p = add("prcc", cmd_prcc, "LHS/PRCC sensitivity of x or y over time (CSV t,param,prcc)")
    p.add_argument("--n", type=int, default=200, help="design size (default 200)")
    p.add_argument("--fraction", type=float, default=0.25,
                   help="range half-width relative to nominal (default 0.25)")
    p.add_argument("--times", type=_floats, metavar="T1,T2,...", help="output times (default 10..100)")
    p.add_argument("--output", choices=("x", "y"), default="x", help="state used as output")
    p.add_argument("--design", metavar="PATH", help="write the LHS design CSV here")
    p.add_argument("--json", metavar="PATH", help="also write the result as JSON")
    add_jobs(p)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "scan", None) is not None and len(args.scan) != 3:
            raise UsageError("--scan expects LO,HI,N")
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be at least 1")
        cfg = apply_overrides(load_config(args.config), args.set)
        args.func(cfg, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except HerdbifError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
