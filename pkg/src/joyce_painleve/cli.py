"""Command-line front end.

Every subcommand is a pure job ``cfg -> result`` so that ``sweep`` can fan it
over a grid of base points in worker processes; results are written in grid
order, which keeps reports independent of the parallelism degree.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Callable

import numpy as np

from .checks import run_suite
from .errors import ConfigError, JoyceError
from .families import PAIRING, BasePoint, FamilyId, FiberPoint
from .isomonodromy import FlowControls, Trajectory, flow_field, integrate_flow, pole_fit
from .joyce import (heavenly_residual, k_third_derivatives, k_third_derivatives_fd,
                    plebanski_w, theta_inverse, theta_map)
from .numerics import Tolerances
from .sampling import random_base, random_fiber
from .spectral import bilinear_pairing, cycle_basis, period, period_matrix, z_coords
from .tau import TAU_CSV_COLUMNS, tau_samples, tau_trajectory, tau_zero_pole_match

SCHEMA = 1
ENV_JOBS = "JOYCE_PAINLEVE_JOBS"
COMMANDS = ("check", "periods", "flow", "pleb", "theta", "tau", "pole-scan", "sweep")

DEFAULTS = {
    "family": "piii3", "t": None, "h": None, "alpha": 0.0, "q": None, "r": 0.0, "s": 0.0,
    "epsilon": 1.0, "sheet": 1, "seed": 0, "n": 3, "span": "1:2", "flow": "w1",
    "normalization": "isomonodromic", "out": None, "format": None, "jobs": None,
    "quad_rel": 1e-10, "ode_rel": 1e-10, "fd_step": 1e-4, "only": None,
    "command": None, "grid": None, "grid_t": None, "grid_h": None,
}

CSV_HELP = (
    "flow CSV columns: " + ", ".join(Trajectory.CSV_COLUMNS)
    + " (chart: 0 regular, 1 pole chart, 2 involuted pole chart).  "
    "tau CSV columns: " + ", ".join(TAU_CSV_COLUMNS) + ".  Reals are written with "
    "17 significant digits.  JSON reports carry \"schema\": 1."
)


# ---------------------------------------------------------------------------
# serialization

def _number(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    return format(x, ".17g")


def dumps(obj, indent: int = 0) -> str:
    """JSON text with floats at 17 significant digits and complex values as ``[re, im]``."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(isinstance(v, (int, float, complex, np.number)) and not isinstance(v, bool)
               for v in seq) and len(seq) <= 8:
            return "[" + ", ".join(dumps(v, indent + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in seq) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (complex, np.complexfloating)):
        return f"[{_number(obj.real)}, {_number(obj.imag)}]"
    if isinstance(obj, (float, np.floating)):
        return _number(float(obj))
    if isinstance(obj, FamilyId):
        return json.dumps(obj.value)
    return json.dumps(str(obj))


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_number(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# configuration

def parse_complex(value) -> complex:
    if isinstance(value, (int, float, complex)):
        return complex(value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return complex(float(value[0]), float(value[1]))
    text = str(value).strip().replace(" ", "").replace("i", "j")
    try:
        return complex(text)
    except ValueError as exc:
        raise ConfigError(f"cannot read {value!r} as a complex number") from exc


def parse_span(value) -> list[complex]:
    if isinstance(value, (list, tuple)):
        return [parse_complex(v) for v in value]
    parts = str(value).split(":")
    if len(parts) < 2:
        raise ConfigError(f"span {value!r} needs at least two vertices separated by ':'")
    return [parse_complex(p) for p in parts]


def _family(cfg) -> FamilyId:
    try:
        return FamilyId.parse(cfg["family"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _tolerances(cfg) -> Tolerances:
    try:
        return Tolerances(quad_rel=float(cfg["quad_rel"]), ode_rel=float(cfg["ode_rel"]),
                          fd_step=float(cfg["fd_step"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _base(cfg, default_t=1.0, default_h=0.5) -> BasePoint:
    fam = _family(cfg)
    t = parse_complex(cfg["t"] if cfg["t"] is not None else default_t)
    h = parse_complex(cfg["h"] if cfg["h"] is not None else default_h)
    alpha = parse_complex(cfg["alpha"]) if fam is FamilyId.PII else 0j
    try:
        base = BasePoint(fam, t, h, alpha)
        base.check_regular()
    except (ValueError, JoyceError) as exc:
        raise ConfigError(f"base point rejected: {exc}") from exc
    return base


def _fiber(cfg, base: BasePoint, default_q=0.5) -> FiberPoint:
    q = parse_complex(cfg["q"] if cfg["q"] is not None else default_q)
    s = parse_complex(cfg["s"]) if base.family is FamilyId.PII else 0j
    try:
        fp = FiberPoint.on_sheet(base, q, parse_complex(cfg["r"]), s,
                                 parse_complex(cfg["epsilon"]), sheet=int(cfg["sheet"]))
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"fiber point rejected: {exc}") from exc
    if fp.p == 0:
        raise ConfigError("q is a branch point (p = 0)")
    return fp


def _sample_fibers(cfg, joyce: bool = False) -> list[FiberPoint]:
    """The explicit fiber if ``q`` is given, else ``n`` seeded random fibers.

    Random fibers sit over the configured base when ``t`` or ``h`` is set
    and over random regular bases otherwise.
    """
    if cfg["q"] is not None:
        return [_fiber(cfg, _base(cfg))]
    rng = np.random.default_rng(int(cfg["seed"]))
    fam = _family(cfg)
    n = int(cfg["n"])
    if cfg["t"] is not None or cfg["h"] is not None:
        base = _base(cfg)
        return [random_fiber(base, rng) for _ in range(n)]
    return [random_fiber(random_base(fam, rng, joyce=joyce), rng) for _ in range(n)]


def _fiber_record(fp: FiberPoint) -> dict:
    return {"t": fp.t, "H": fp.H, "alpha": fp.alpha, "q": fp.q, "p": fp.p, "r": fp.r, "s": fp.s,
            "epsilon": fp.epsilon}


# ---------------------------------------------------------------------------
# jobs

def job_check(cfg) -> dict:
    only = cfg["only"]
    records = run_suite(_family(cfg), int(cfg["seed"]), int(cfg["n"]), names=only)
    return {"records": records, "passed": all(r["passed"] for r in records)}


def job_periods(cfg) -> dict:
    base = _base(cfg)
    tol = _tolerances(cfg)
    cycles = cycle_basis(base, tol)
    expected = 2j * math.pi * PAIRING[base.family]
    rec = {"family": base.family.value, "t": base.t, "H": base.H, "alpha": base.alpha,
           "z": list(z_coords(base, cycles, tol=tol))}
    rows = period_matrix(base, cycles, tol=tol)
    rec["beta"] = [complex(r[0]) for r in rows]
    rec["omega"] = [complex(r[1]) for r in rows]
    if base.family is FamilyId.PII:
        rec["beta_alpha"] = [period("beta_alpha", c, base, "quadrature", tol) for c in cycles[:2]]
    pairings = {}
    worst = 0.0
    for method in ("elliptic", "quadrature"):
        if base.family is FamilyId.PII and base.alpha != 0 and method == "elliptic":
            continue
        val = bilinear_pairing("omega", "beta_t_or_s", cycles, base, method, tol)
        pairings[method] = val
        worst = max(worst, abs(val - expected))
    rec["pairing"] = pairings
    rec["pairing_expected"] = expected
    rec["pairing_residual"] = worst
    return {"records": [rec], "passed": worst < 1e-9}


def _controls(cfg) -> FlowControls:
    return FlowControls(tol=_tolerances(cfg))


def _flow_start(cfg, span) -> FiberPoint:
    base = _base(cfg, default_t=span[0])
    return _fiber(cfg, base)


def job_flow(cfg) -> dict:
    span = parse_span(cfg["span"])
    fp = _flow_start(cfg, span)
    try:
        ff = flow_field(fp.family, cfg["flow"], fp.epsilon, cfg["normalization"])
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc
    traj = integrate_flow(ff, fp, span, _controls(cfg))
    rows = []
    for i in range(len(traj)):
        t, H, a, q, p, r, s = traj.states[i]
        row = [float(traj.params[i].real), float(traj.params[i].imag)]
        for z in (t, H, q, p, r, s):
            row += [float(z.real), float(z.imag)]
        row.append(int(traj.charts[i]))
        rows.append(row)
    return {"csv": (Trajectory.CSV_COLUMNS, rows),
            "records": [{"samples": len(traj), "switches": traj.switches}], "passed": True}


def job_pleb(cfg) -> dict:
    records, ok = [], True
    for fp in _sample_fibers(cfg, joyce=True):
        rec = _fiber_record(fp)
        rec["W"] = plebanski_w(fp)
        if fp.family is not FamilyId.PI:
            exact = k_third_derivatives(fp)
            fd, sym = k_third_derivatives_fd(fp)
            rel = max(abs(fd[k] - exact[k]) / (abs(exact[k]) if abs(exact[k]) > 1e-12 else 1.0)
                      for k in fd)
            rec["K_third"] = {",".join(k): v for k, v in exact.items()}
            rec["K_third_fd_relative_error"] = rel
            ok &= rel < 1e-6
        if fp.family is FamilyId.PII and (fp.alpha != 0 or fp.s != 0):
            rec["heavenly_residual"] = None
        else:
            res = heavenly_residual(fp)
            rec["heavenly_residual"] = abs(res)
            ok &= abs(res) < 1e-5
        records.append(rec)
    return {"records": records, "passed": bool(ok)}


def job_theta(cfg) -> dict:
    records, ok = [], True
    for fp in _sample_fibers(cfg):
        a = theta_map(fp, "uniformization")
        b = theta_map(fp, "periods")
        back = theta_inverse(fp.base, a, fp.epsilon)
        trip = max(abs(back.q - fp.q), abs(back.r - fp.r), abs(back.p - fp.p))
        dist = a.distance(b)
        rec = _fiber_record(fp)
        rec.update({"theta": list(a.vector), "theta_periods": list(b.vector),
                    "lattice": [list(v) for v in a.lattice], "backend_distance": dist,
                    "round_trip_error": trip})
        ok &= dist < 1e-7 and trip < 1e-7
        records.append(rec)
    return {"records": records, "passed": bool(ok)}


def job_tau(cfg) -> dict:
    span = parse_span(cfg["span"])
    fp = _flow_start(cfg, span)
    traj = tau_trajectory(fp, span, _controls(cfg))
    samples = tau_samples(traj)
    rows = [[float(s.t.real), float(s.t.imag), float(s.log_tau.real), float(s.log_tau.imag),
             float(s.H.real), float(s.H.imag), s.chart] for s in samples]
    zeros = []
    if any(c == 1 for c in traj.charts):
        for m in tau_zero_pole_match(traj):
            zeros.append({"zero": m.zero, "pole": m.pole, "gap": m.gap, "order": m.order})
    records = [{"t": s.t, "log_tau": s.log_tau, "H": s.H, "chart": s.chart} for s in samples]
    return {"csv": (TAU_CSV_COLUMNS, rows), "records": records, "zeros": zeros,
            "passed": all(z["gap"] < 1e-5 for z in zeros)}


def _scan_seed(base: BasePoint, rng: np.random.Generator, epsilon: complex) -> FiberPoint:
    """Initial data for a pole scan: real q over a real base, complex otherwise."""
    real = base.t.imag == 0 and base.H.imag == 0 and base.alpha.imag == 0
    roots = np.roots(base.branch_polynomial())
    while True:
        q = complex(rng.uniform(-1.5, 1.5)) if real else complex(*rng.uniform(-1.5, 1.5, 2))
        if base.family is FamilyId.PIII3 and abs(q) < 0.3:
            continue
        if len(roots) and np.min(np.abs(roots - q)) < 0.15:
            continue
        return FiberPoint.on_sheet(base, q, 0j, 0j, epsilon, sheet=int(rng.choice([1, -1])))


def job_pole_scan(cfg) -> dict:
    span = parse_span(cfg["span"])
    base = _base(cfg, default_t=span[0])
    rng = np.random.default_rng(int(cfg["seed"]))
    eps = parse_complex(cfg["epsilon"])
    records, ok = [], True
    for k in range(int(cfg["n"])):
        fp = _scan_seed(base, rng, eps)
        rec = {"seed_index": k, "q": fp.q, "p": fp.p, "poles": []}
        try:
            traj = integrate_flow(flow_field(base.family, "w1", eps), fp, span, _controls(cfg))
        except JoyceError as exc:
            rec["error"] = f"{type(exc).__name__}: {exc}"
            records.append(rec)
            continue
        visits = sum(1 for i, c in enumerate(traj.charts)
                     if c != 0 and (i == 0 or traj.charts[i - 1] == 0))
        for which in range(visits):
            try:
                fit = pole_fit(traj, which)
                rec["poles"].append({"t0": fit.t0, "order": fit.order, "leading": fit.leading,
                                     "subleading": fit.subleading, "H0": fit.H0,
                                     "residual": fit.residual, "chart": fit.chart})
            except JoyceError as exc:
                rec["poles"].append({"error": f"{type(exc).__name__}: {exc}"})
                ok = False
        records.append(rec)
    return {"records": records, "passed": bool(ok)}


JOBS: dict[str, Callable] = {"check": job_check, "periods": job_periods, "flow": job_flow,
                             "pleb": job_pleb, "theta": job_theta, "tau": job_tau,
                             "pole-scan": job_pole_scan}


def _run_job(command: str, cfg: dict) -> dict:
    try:
        return JOBS[command](cfg)
    except ConfigError:
        raise
    except JoyceError as exc:
        return {"records": [], "passed": False, "error": f"{type(exc).__name__}: {exc}"}


def _grid(cfg) -> list[dict]:
    points = []
    if cfg["grid"]:
        points = [dict(p) for p in cfg["grid"]]
    elif cfg["grid_t"] or cfg["grid_h"]:
        ts = str(cfg["grid_t"] or cfg["t"] or 1).split(",")
        hs = str(cfg["grid_h"] or cfg["h"] or 0.5).split(",")
        points = [{"t": t, "h": h} for t in ts for h in hs]
    if not points:
        raise ConfigError("sweep needs a nonempty grid (config 'grid' or --grid-t/--grid-h)")
    for p in points:
        unknown = set(p) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown grid keys {sorted(unknown)}")
        _base({**cfg, **p})
    return points


def _sweep_worker(args):
    command, cfg = args
    return _run_job(command, cfg)


def job_sweep(cfg) -> dict:
    command = cfg["command"]
    if command not in JOBS or command == "sweep":
        raise ConfigError(f"sweep --command must be one of {sorted(set(JOBS) - {'sweep'})}")
    points = _grid(cfg)
    tasks = [(command, {**cfg, **p}) for p in points]
    jobs = int(cfg["jobs"] or os.environ.get(ENV_JOBS, 1) or 1)
    if jobs < 1:
        raise ConfigError("parallelism degree must be positive")
    if jobs == 1:
        results = [_sweep_worker(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_worker, tasks))
    out = []
    for point, res in zip(points, results):
        res = dict(res)
        res.pop("csv", None)
        out.append({"point": point, **res})
    return {"records": out, "passed": all(r["passed"] for r in results)}


JOBS["sweep"] = job_sweep


# ---------------------------------------------------------------------------
# argument parsing

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("point and numerics")
    g.add_argument("--config", help="JSON file with option values; flags override it")
    g.add_argument("--family", help="pi, pii or piii3")
    for name in ("t", "h", "alpha", "q", "r", "s", "epsilon"):
        g.add_argument(f"--{name}", help=f"{name} (complex, e.g. 1+0.5j)")
    g.add_argument("--sheet", type=int, choices=(1, -1), help="sign of p = sqrt(Q0(q))")
    g.add_argument("--seed", type=int, help="seed for random sample points")
    g.add_argument("--n", type=int, help="number of random sample points")
    g.add_argument("--span", help="parameter path vertices, e.g. 0:5 or 1:2+1j:3")
    g.add_argument("--out", help="output file (default: stdout)")
    g.add_argument("--format", choices=("csv", "json"), help="output format for flow and tau")
    g.add_argument("--quad-rel", type=float, dest="quad_rel")
    g.add_argument("--ode-rel", type=float, dest="ode_rel")
    g.add_argument("--fd-step", type=float, dest="fd_step")
    g.add_argument("--jobs", type=int, help=f"worker processes for sweep (default ${ENV_JOBS} or 1)")

    parser = argparse.ArgumentParser(prog="joyce-painleve", epilog=CSV_HELP,
                                     description="Joyce structures of Painleve I, II, III3.")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    p = sub.add_parser("check", parents=[common], help="run the invariant suite", epilog=CSV_HELP)
    p.add_argument("--only", action="append", help="restrict to named invariants")
    sub.add_parser("periods", parents=[common], help="z-coordinates and bilinear pairings")
    p = sub.add_parser("flow", parents=[common], help="integrate a flow; trajectory CSV",
                       epilog=CSV_HELP)
    p.add_argument("--flow", choices=("w1", "w2", "w3"))
    p.add_argument("--normalization", choices=("isomonodromic", "hamiltonian"))
    sub.add_parser("pleb", parents=[common], help="W, K derivatives and heavenly residuals")
    sub.add_parser("theta", parents=[common], help="theta coordinates and their inverse")
    sub.add_parser("tau", parents=[common], help="log tau along the w1 flow", epilog=CSV_HELP)
    sub.add_parser("pole-scan", parents=[common], help="pole fits over seeded initial data")
    p = sub.add_parser("sweep", parents=[common], help="fan a subcommand over a base-point grid")
    p.add_argument("--command", help="subcommand to run at each grid point")
    p.add_argument("--grid-t", dest="grid_t", help="comma-separated t values")
    p.add_argument("--grid-h", dest="grid_h", help="comma-separated H values")
    p.add_argument("--only", action="append", help="restrict check to named invariants")
    return parser


def build_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        loaded = {k.replace("-", "_"): v for k, v in loaded.items()}
        unknown = set(loaded) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        cfg.update(loaded)
    for key, val in vars(args).items():
        if key in cfg and val is not None:
            cfg[key] = val
    for key in ("quad_rel", "ode_rel", "fd_step"):
        if not float(cfg[key]) > 0:
            raise ConfigError(f"{key} must be positive")
    if int(cfg["n"]) < 1:
        raise ConfigError("n must be positive")
    return cfg


def _write(text: str, path) -> None:
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def run(argv=None) -> int:
    """Entry point returning the exit code: 0 passed, 1 failed invariant, 2 bad configuration."""
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if not exc.code else 2
    command = args.subcommand
    try:
        cfg = build_config(args)
        result = JOBS[command](cfg) if command in ("sweep",) else _run_job(command, cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    fmt = cfg["format"] or ("csv" if "csv" in result else "json")
    if fmt == "csv" and "csv" in result:
        _write(_csv_text(*result["csv"]), cfg["out"])
    else:
        report = {"schema": SCHEMA, "command": command,
                  "config": {k: v for k, v in cfg.items() if k not in ("out", "config", "jobs")},
                  "passed": bool(result["passed"])}
        report.update({k: v for k, v in result.items() if k not in ("csv", "passed")})
        _write(dumps(report) + "\n", cfg["out"])
    if not result["passed"]:
        for rec in result.get("records", []):
            if isinstance(rec, dict) and rec.get("passed") is False:
                print(f"FAIL {rec.get('name')} [{rec.get('family')}] ({rec.get('anchor')}): "
                      f"{rec.get('value')}", file=sys.stderr)
        if "error" in result:
            print(f"FAIL {command}: {result['error']}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())
