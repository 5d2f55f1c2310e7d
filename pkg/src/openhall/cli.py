"""Command line front end.

    openhall eig      --config run.toml --k 0.1 0.2
    openhall steady   --config run.toml --k 0.1 0.2
    openhall chern    --config run.toml
    openhall hall     --config run.toml
    openhall sweep    --config run.toml --out rd_sweep.csv --threads 4
    openhall validate [--config run.toml] --seed 1

Configs are TOML with tables [model], [dissipator], [grid], [response],
[sweep] and [output].  Exit codes: 0 success, 2 validation failure,
3 convergence failure, 4 config error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import oracle
from .algebra import check_density_matrix, eigh_stack, liouvillian_stack
from .errors import (ConfigError, ConvergenceError, DegeneratePoint, OpenHallError, SolverError,
                     ValidationError)
from .lindblad import SingleSteadyBand, SpinLowering, TwoSteadyBands, parse_dissipator_config
from .model import Plane, load_document, parse_model_config
from .quadrature import TorusGrid, plane_grid
from .response import (chern_number_fhs, hall_conductivity_general, hall_two_band_spin,
                       steady_state_k)

log = logging.getLogger("openhall")

EXIT_OK, EXIT_VALIDATION, EXIT_CONVERGENCE, EXIT_CONFIG = 0, 2, 3, 4
UNITS = "sigma in e^2/h; energies in meV; momenta in nm^-1"
SWEEP_COLUMNS = ("sigma0", "dsigma1", "dsigma2", "total", "chern_rate", "chern_number",
                 "excluded", "error_estimate", "error")
TABLES = ("model", "dissipator", "grid", "response", "sweep", "output")
METHODS = ("auto", "general", "closed", "current")


@dataclass
class RunConfig:
    model: dict
    dissipator: Optional[dict] = None
    grid: dict = field(default_factory=dict)
    response: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)

    def resolved(self):
        return {k: v for k, v in (("model", self.model), ("dissipator", self.dissipator),
                                  ("grid", self.grid), ("response", self.response),
                                  ("sweep", self.sweep), ("output", self.output)) if v}


def read_config(path):
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", "--config") from None
    return load_document(text)


def run_config(doc, need_model=True):
    unknown = sorted(set(doc) - set(TABLES))
    if unknown:
        raise ConfigError("unknown table(s); expected " + ", ".join(TABLES), unknown[0])
    for t in TABLES:
        if t in doc and not isinstance(doc[t], dict):
            raise ConfigError("expected a table", t)
    if need_model and "model" not in doc:
        raise ConfigError("missing [model] table", "model")
    return RunConfig(doc.get("model", {}), doc.get("dissipator"), doc.get("grid", {}),
                     doc.get("response", {}), doc.get("sweep", {}), doc.get("output", {}))


# --------------------------------------------------------------------------
# building objects from tables

def build(cfg):
    model = parse_model_config({"model": cfg.model})
    spec = None
    if cfg.dissipator is not None:
        spec = parse_dissipator_config(cfg.dissipator, model.dim)
    return model, spec


def build_grid(model, block):
    known = {"resolution", "kmax", "scale", "tol", "max_levels"}
    unknown = sorted(set(block) - known)
    if unknown:
        raise ConfigError("unknown grid key", unknown[0])
    res = block.get("resolution")
    if res is not None:
        if isinstance(res, int) and not isinstance(res, bool):
            res = [res, res]
        if (not isinstance(res, list) or len(res) != 2
                or not all(isinstance(n, int) and not isinstance(n, bool) for n in res)):
            raise ConfigError("expected an integer or a pair of integers", "grid.resolution")
        res = tuple(res)
    dom = model.domain
    try:
        if isinstance(dom, Plane):
            kmax = float(block["kmax"]) if "kmax" in block else None
            scale = float(block["scale"]) if "scale" in block else None
            return plane_grid(model, res or (128, 128), kmax, scale)
        if "kmax" in block or "scale" in block:
            raise ConfigError("kmax/scale apply to plane models only", "grid")
        return TorusGrid(dom.periods, dom.origin, res or (64, 64), dom.open_axes)
    except ValidationError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), "grid") from None


def _tolerances(block):
    try:
        tol = float(block.get("tol", 1e-5))
        levels = int(block.get("max_levels", 5))
    except (TypeError, ValueError):
        raise ConfigError("tol and max_levels must be numbers", "grid") from None
    if not tol > 0 or levels < 1:
        raise ConfigError("tol must be positive and max_levels >= 1", "grid")
    return tol, levels


def _method(cfg, spec):
    m = cfg.response.get("method", "auto")
    if m not in METHODS:
        raise ConfigError(f"expected one of {METHODS}", "response.method")
    if m == "auto":
        return "closed" if isinstance(spec, SpinLowering) else "general"
    return m


def focus_band(model, spec):
    """Band whose FHS number is reported next to a conductivity."""
    if isinstance(spec, SingleSteadyBand):
        return spec.target
    if isinstance(spec, TwoSteadyBands):
        return spec.targets[0]
    return 0


# --------------------------------------------------------------------------
# subcommand bodies

def compute_hall(cfg):
    model, spec = build(cfg)
    if spec is None:
        raise ConfigError("hall needs a [dissipator] table", "dissipator")
    grid = build_grid(model, cfg.grid)
    tol, levels = _tolerances(cfg.grid)
    method = _method(cfg, spec)
    if method == "closed":
        if not isinstance(spec, SpinLowering):
            raise ConfigError("the closed route is for the spin dissipator", "response.method")
        b = hall_two_band_spin(model, spec.gamma, grid, tol=tol, max_levels=levels)
        out = b.as_dict()
    elif method == "general":
        b = hall_conductivity_general(model, spec, None, grid, tol=tol, max_levels=levels)
        out = b.as_dict()
    else:
        E = float(cfg.response.get("field", 1e-4))
        rep = oracle.hall_from_current_report(model, spec, E, grid, tol=tol, max_levels=levels)
        out = {"sigma0": math.nan, "dsigma1": math.nan, "dsigma2": math.nan, "total": rep.sigma,
               "chern_rate": rep.sigma, "error": rep.error, "excluded": rep.excluded,
               "levels": rep.levels, "method": "current", "field": E}
    if isinstance(grid, TorusGrid) and model.periods is not None:
        try:
            out["chern_number"] = chern_number_fhs(model, focus_band(model, spec)).value
        except (ValidationError, ConvergenceError, DegeneratePoint):
            out["chern_number"] = None
    return out


def compute_chern(cfg):
    model, _ = build(cfg)
    block = cfg.grid
    grid = None
    if "resolution" in block:
        res = block["resolution"]
        res = (res, res) if isinstance(res, int) else tuple(res)
        if isinstance(model.domain, Plane):
            grid = plane_grid(model, res, kmax=math.inf)
        else:
            grid = TorusGrid(model.periods, (0.0, 0.0), res)
    rows = []
    for b in range(model.dim):
        c = chern_number_fhs(model, b, grid)
        rows.append({"band": b, "chern": c.value, "raw": c.raw, "residual": c.residual,
                     "regularized": c.regularized})
    return rows


def compute_eig(model, k):
    w, U = eigh_stack(model.hamiltonian(np.asarray(k[0]), np.asarray(k[1])))
    return [{"band": i, "energy": float(w[i]),
             "vector_re": U[:, i].real.tolist(), "vector_im": U[:, i].imag.tolist()}
            for i in range(len(w))]


def compute_steady(cfg, k):
    model, spec = build(cfg)
    if spec is None:
        raise ConfigError("steady needs a [dissipator] table", "dissipator")
    st = steady_state_k(model, spec, k)
    check_density_matrix(st.order0, tol=1e-8)
    return {"k": list(k), "energies": st.energies.tolist(),
            "order0_re": st.order0.real.tolist(), "order0_im": st.order0.imag.tolist(),
            "order1_re": st.order1.real.tolist(), "order1_im": st.order1.imag.tolist(),
            "basis": "spinor (upper, lower)" if isinstance(spec, SpinLowering) else "ascending"}


# --------------------------------------------------------------------------
# sweeps

def sweep_axes(cfg):
    if not cfg.sweep:
        raise ConfigError("sweep needs a [sweep] table", "sweep")
    if len(cfg.sweep) > 2:
        raise ConfigError("at most two swept parameters", "sweep")
    axes = []
    for name, spec in cfg.sweep.items():
        if name not in cfg.model and (cfg.dissipator is None or name not in cfg.dissipator):
            raise ConfigError("swept parameter is not a model or dissipator key", f"sweep.{name}")
        if not isinstance(spec, list) or len(spec) != 3:
            raise ConfigError("expected [start, stop, count]", f"sweep.{name}")
        start, stop, count = spec
        if not isinstance(count, int) or isinstance(count, bool) or count < 2:
            raise ConfigError("count must be an integer >= 2", f"sweep.{name}")
        axes.append((name, np.linspace(float(start), float(stop), count).tolist()))
    return axes


def sweep_points(axes):
    if len(axes) == 1:
        return [(v,) for v in axes[0][1]]
    return [(a, b) for a in axes[0][1] for b in axes[1][1]]


def _row(cfg, names, values):
    c = copy.deepcopy(cfg)
    for name, v in zip(names, values):
        if name in c.model:
            c.model[name] = int(round(v)) if name in ("p", "q", "l", "m") else v
        else:
            c.dissipator[name] = v
    row = dict(zip(names, values))
    try:
        out = compute_hall(c)
        for col in SWEEP_COLUMNS:
            row[col] = out.get(col)
        row["error_estimate"] = out["error"]
        row["error"] = ""
    except (OpenHallError, ArithmeticError) as exc:
        for col in SWEEP_COLUMNS:
            row[col] = None
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_sweep(cfg, threads=1):
    axes = sweep_axes(cfg)
    names = [a[0] for a in axes]
    build(cfg)                       # fail fast on a broken base config
    pts = sweep_points(axes)
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(lambda v: _row(cfg, names, v), pts))
    return names, rows


# --------------------------------------------------------------------------
# emission

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o).__name__)


def emit(payload, columns, fmt, config, out):
    """Write rows (CSV with commented header) or a JSON document."""
    if fmt == "json":
        doc = {"units": UNITS, "config": config, "rows": payload}
        text = json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"
    else:
        buf = io.StringIO()
        buf.write(f"# units: {UNITS}\n")
        buf.write("# config: " + json.dumps(config, sort_keys=True, default=_json_default) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in payload:
            w.writerow([_fmt(r.get(c)) for c in columns])
        text = buf.getvalue()
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# validation

def invariant_checks(rng):
    """Trace and Hermiticity preservation of random generators."""
    worst_tr = worst_h = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 5))
        a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        h = a + a.conj().T
        jumps = [(rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n)), float(rng.random()))
                 for _ in range(2)]
        L = liouvillian_stack(h, jumps)
        b = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        rho = b @ b.conj().T
        rho /= np.trace(rho)
        d = (L @ rho.T.reshape(-1)).reshape(n, n).T
        worst_tr = max(worst_tr, abs(np.trace(d)))
        worst_h = max(worst_h, float(np.max(np.abs(d - d.conj().T))))
    return [oracle.CheckResult("generator preserves trace", worst_tr < 1e-12, worst_tr, 1e-12),
            oracle.CheckResult("generator preserves Hermiticity", worst_h < 1e-12, worst_h, 1e-12)]


def run_validate(doc, seed, npoints, mutate):
    rng = np.random.default_rng(seed)
    results = invariant_checks(rng)
    pairs = None
    if doc.get("model") is not None:
        cfg = run_config(doc)
        model, spec = build(cfg)
        if spec is None:
            raise ConfigError("validate with a [model] also needs a [dissipator]", "dissipator")
        pairs = [(model.name, model, spec)]
    results += oracle.run_validation(int(rng.integers(2 ** 31)), npoints, mutate, pairs)
    return results


# --------------------------------------------------------------------------
# argparse

def _parser():
    p = argparse.ArgumentParser(prog="openhall", description="Open-system Hall conductivity and Chern tools.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, fmt_default):
        sp.add_argument("--config", help="TOML run config")
        sp.add_argument("--out", help="output path (default stdout)")
        sp.add_argument("--format", choices=("csv", "json"), default=None,
                        help=f"output format (default {fmt_default})")
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--seed", type=int, default=0)
        sp.set_defaults(fmt_default=fmt_default)

    for name, fmt in (("eig", "json"), ("steady", "json"), ("chern", "json"), ("hall", "json"),
                      ("sweep", "csv"), ("validate", "json")):
        sp = sub.add_parser(name)
        common(sp, fmt)
        if name in ("eig", "steady"):
            sp.add_argument("--k", nargs=2, type=float, required=True, metavar=("KX", "KY"))
        if name == "validate":
            sp.add_argument("--points", type=int, default=20, help="random momenta per pair")
            sp.add_argument("--mutate", choices=oracle.MUTATIONS, help=argparse.SUPPRESS)
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        for entry in getattr(exc, "history", [])[-3:]:
            print(f"  level {entry[0]}: value {entry[1]}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (ValidationError, DegeneratePoint, SolverError) as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


def _dispatch(args):
    doc = read_config(args.config)
    fmt = args.format or args.fmt_default
    if args.threads < 1:
        raise ConfigError("must be >= 1", "--threads")
    if args.command == "validate":
        results = run_validate(doc, args.seed, args.points, args.mutate)
        rows = [{"check": r.name, "ok": r.ok, "worst": r.worst, "threshold": r.threshold}
                for r in results]
        emit(rows, ("check", "ok", "worst", "threshold"), fmt, {"seed": args.seed}, args.out)
        failed = [r for r in results if not r.ok]
        for r in failed:
            print(f"FAIL {r.name}: {r.worst:.3e} (threshold {r.threshold:.1e})", file=sys.stderr)
        return EXIT_VALIDATION if failed else EXIT_OK

    cfg = run_config(doc)
    out = args.out or cfg.output.get("path")
    if args.format is None and "format" in cfg.output:
        fmt = cfg.output["format"]
        if fmt not in ("csv", "json"):
            raise ConfigError("expected csv or json", "output.format")
    resolved = cfg.resolved()
    if args.command == "eig":
        model, _ = build(cfg)
        emit(compute_eig(model, args.k), ("band", "energy"), fmt, resolved, out)
    elif args.command == "steady":
        if fmt != "json":
            raise ConfigError("steady states are emitted as JSON only", "--format")
        emit([compute_steady(cfg, tuple(args.k))], (), "json", resolved, out)
    elif args.command == "chern":
        emit(compute_chern(cfg), ("band", "chern", "raw", "residual", "regularized"), fmt,
             resolved, out)
    elif args.command == "hall":
        row = compute_hall(cfg)
        cols = ("sigma0", "dsigma1", "dsigma2", "total", "chern_rate", "error", "excluded",
                "levels", "method")
        emit([row], cols, fmt, resolved, out)
    elif args.command == "sweep":
        names, rows = run_sweep(cfg, args.threads)
        emit(rows, tuple(names) + SWEEP_COLUMNS, fmt, resolved, out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
