"""Command line entry point.

``branchbsde run CONFIG`` solves a benchmark or an inline problem described
by a JSON file and writes, under the output directory:

* ``manifest.json``: config echo, bounds report, per-step wall time, cap hits
* ``grid_tNNN.csv``: one file per date, columns ``x0..x{d-1},value``
* ``errors.csv``: per node at ``t = 0`` when a reference exists
* ``sweep.csv``: one row per swept value in sweep mode

Exit status is 0 on success, 2 for configuration errors, 3 when the
period gate refuses the run and 4 on tree overflow.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .bounds import HorizonError, explosion_horizon, growth_bound
from .branching import TreeOverflowError
from .driver import fit_local_polynomial, fit_time_sliced
from .dynamics import Box, Dynamics
from .problem import Problem
from .scheme import SchemeConfig, run_scheme
from .testcases import REGISTRY, BenchmarkProblem, get_benchmark, self_convergent_reference

OUTPUT_ENV = "BRANCHBSDE_OUTPUT_ROOT"
EXIT_CONFIG, EXIT_GATE, EXIT_OVERFLOW = 2, 3, 4
ERROR_COLUMNS = ["node", "estimate", "reference", "abs_error", "pct_error", "std_err", "cap_hit"]
TOP_KEYS = {"benchmark", "params", "problem", "scheme", "sweep", "output", "name", "self_convergent"}
SWEEPABLE = {"n_steps", "n_substeps", "n_pieces", "grid_step", "tol", "cap", "seed"}


class ConfigError(ValueError):
    pass


_NAMESPACE = {k: getattr(np, k) for k in (
    "sin", "cos", "tan", "exp", "log", "sqrt", "abs", "pi", "e", "where", "minimum", "maximum",
    "prod", "sum", "mean", "tanh", "arctan", "clip", "ones_like", "zeros_like", "sign")}


def _expr(src: str, args: str):
    """Compile a numpy expression of the given argument names into a callable."""
    try:
        code = compile(src, "<config>", "eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad expression {src!r}: {exc.msg}") from None
    names = [a.strip() for a in args.split(",")]

    def fn(*vals):
        scope = dict(_NAMESPACE)
        scope.update(zip(names, vals))
        return eval(code, {"__builtins__": {}}, scope)

    return fn


def inline_problem(block: dict, scheme: SchemeConfig) -> BenchmarkProblem:
    """Problem from expressions. ``x`` is the ``(n, d)`` state array, ``y`` the values."""
    required = {"lower", "upper", "drift", "vol", "terminal", "driver", "bound", "horizon"}
    missing = required - block.keys()
    if missing:
        raise ConfigError(f"inline problem misses {sorted(missing)}")
    try:
        box = Box(block["lower"], block["upper"])
    except Exception as exc:
        raise ConfigError(f"bad box: {exc}") from None
    drift_e = _expr(block["drift"], "x")
    vol_e = _expr(block["vol"], "x")
    term_e = _expr(block["terminal"], "x")
    drv_e = _expr(block["driver"], "t, y")
    xterm_e = _expr(block["driver_x"], "t, x") if "driver_x" in block else None
    ref_e = _expr(block["reference"], "t, x") if "reference" in block else None

    def drift(x):
        return np.broadcast_to(np.asarray(drift_e(x), dtype=float), x.shape).copy()

    def vol(x):
        out = np.asarray(vol_e(x), dtype=float)
        return np.broadcast_to(out, (len(x),)).copy() if out.ndim <= 1 else out

    def terminal(x):
        return np.broadcast_to(np.asarray(term_e(x), dtype=float), (len(x),)).copy()

    def f_ty(t, y):
        return np.broadcast_to(np.asarray(drv_e(t, y), dtype=float), np.shape(y))

    def shift_value(t, x):
        return np.broadcast_to(np.asarray(xterm_e(t, x), dtype=float), (len(x),))

    def driver_fn(t, x, y):
        out = f_ty(t, y)
        return out + shift_value(t, x) if xterm_e is not None else out

    bound = float(block["bound"])
    horizon = float(block["horizon"])
    dyn = Dynamics(drift, vol, box, float(block.get("euler_dt", 0.002)))
    fit_domain = block.get("fit_domain", bound)
    time_dependent = bool(block.get("time_dependent", False))

    def make_driver(n_pieces, degree):
        if time_dependent:
            base = fit_time_sliced(f_ty, fit_domain, n_pieces, degree,
                                   np.linspace(0.0, horizon, int(block.get("time_slices", 200))))
        else:
            base = fit_local_polynomial(lambda x, y: f_ty(0.0, y), fit_domain, n_pieces, degree)
        if xterm_e is None:
            return base
        n_coef = base.coeffs.shape[-1]

        def shift(t, x):
            out = np.zeros((len(x), n_coef))
            out[:, 0] = shift_value(t, x)
            return out

        return base.with_x_terms(shift=shift, box=box)

    problem = Problem(dyn, terminal, bound, horizon, driver_fn=driver_fn, make_driver=make_driver,
                      name=block.get("name", "inline"))
    reference = None
    if ref_e is not None:
        reference = lambda t, x: np.broadcast_to(np.asarray(ref_e(t, x), dtype=float), (len(x),))
    return BenchmarkProblem(problem.name, problem, reference, scheme)


def _check_overrides(over: dict) -> dict:
    known = {f.name: f for f in fields(SchemeConfig)}
    clean = {}
    for key, val in over.items():
        if key not in known:
            raise ConfigError(f"unknown scheme option {key!r}")
        if key in ("n_steps", "n_substeps", "picard_iterations", "cap", "batch", "workers",
                   "n_pieces", "degree", "seed", "node_cap"):
            if isinstance(val, bool) or not isinstance(val, int):
                raise ConfigError(f"scheme option {key!r} must be an integer")
        elif key in ("grid_step", "tol", "lifetime_rate", "euler_dt"):
            if isinstance(val, bool) or not isinstance(val, (int, float)) and val is not None:
                raise ConfigError(f"scheme option {key!r} must be a number")
        elif key == "allow_horizon_override" and not isinstance(val, bool):
            raise ConfigError("allow_horizon_override must be true or false")
        elif key in ("method", "interpolation") and not isinstance(val, str):
            raise ConfigError(f"scheme option {key!r} must be a string")
        clean[key] = val
    return clean


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    if ("benchmark" in cfg) == ("problem" in cfg):
        raise ConfigError("config needs exactly one of 'benchmark' or 'problem'")
    return cfg


def resolve(cfg: dict, seed=None, workers=None, allow_override=False):
    """Benchmark and validated SchemeConfig for a loaded config."""
    over = _check_overrides(cfg.get("scheme", {}))
    if "benchmark" in cfg:
        if cfg["benchmark"] not in REGISTRY:
            raise ConfigError(f"unknown benchmark {cfg['benchmark']!r}; known: {sorted(REGISTRY)}")
        try:
            bench = get_benchmark(cfg["benchmark"], **cfg.get("params", {}))
        except TypeError as exc:
            raise ConfigError(f"bad benchmark params: {exc}") from None
        base = bench.config
    else:
        base = SchemeConfig()
        bench = None
    if seed is not None:
        over["seed"] = seed
    over["workers"] = workers if workers is not None else over.get("workers", os.cpu_count() or 1)
    if allow_override:
        over["allow_horizon_override"] = True
    try:
        scheme = replace(base, **over)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad scheme options: {exc}") from None
    if bench is None:
        bench = inline_problem(cfg["problem"], scheme)
    sweep = cfg.get("sweep") or {}
    if len(sweep) > 1:
        raise ConfigError("sweep over a single option at a time")
    for key, vals in sweep.items():
        if key not in SWEEPABLE:
            raise ConfigError(f"cannot sweep {key!r}; sweepable: {sorted(SWEEPABLE)}")
        if not isinstance(vals, list) or not vals:
            raise ConfigError("sweep values must be a non-empty list")
        for v in vals:
            try:
                replace(scheme, **_check_overrides({key: v}))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad sweep value {v!r}: {exc}") from None
    return bench, scheme


def error_rows(bench: BenchmarkProblem, result) -> list:
    grid = result.initial
    nodes = grid.nodes()
    est = grid.values.ravel()
    ref = np.asarray(bench.reference(0.0, nodes), dtype=float)
    err = np.abs(est - ref)
    with np.errstate(divide="ignore", invalid="ignore"):
        pct = np.where(ref != 0, 100.0 * err / np.abs(ref), np.nan)
    rows = []
    for k in range(len(nodes)):
        rows.append([" ".join(repr(float(c)) for c in nodes[k]), repr(float(est[k])),
                     repr(float(ref[k])), repr(float(err[k])), repr(float(pct[k])),
                     repr(float(result.std_err[0][k])), int(result.hit_cap[0][k])])
    return rows


def write_outputs(out: Path, bench: BenchmarkProblem, scheme: SchemeConfig, result, wall: float,
                  config: dict) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    for i, grid in enumerate(result.grids):
        grid.to_csv(out / f"grid_t{i:03d}.csv")
    summary = {"wall_seconds": wall, "cap_hits": result.cap_hits}
    if bench.reference is not None:
        rows = error_rows(bench, result)
        with open(out / "errors.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(ERROR_COLUMNS)
            w.writerows(rows)
        errs = np.array([float(r[3]) for r in rows])
        summary.update(max_abs_error=float(errs.max()), mean_abs_error=float(errs.mean()))
    manifest = {
        "config": config,
        "scheme": scheme.to_dict(),
        "benchmark": {"name": bench.name, "params": bench.params, "certified": bench.certified,
                      "pde_residual": bench.residual},
        "horizon_override": scheme.allow_horizon_override,
        "bounds": result.bounds.as_dict(),
        "offspring_probs": [float(p) for p in result.law.offspring_probs],
        "dates": [float(t) for t in result.dates],
        "step_seconds": [float(s) for s in result.step_seconds],
        "cap_hits_per_step": [int(np.sum(h)) if h is not None else 0 for h in result.hit_cap],
        "summary": summary,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, default=float)
    return summary


def _summary_line(label, summary):
    parts = [label]
    if "max_abs_error" in summary:
        parts.append(f"max_abs_error={summary['max_abs_error']:.6g}")
        parts.append(f"mean_abs_error={summary['mean_abs_error']:.6g}")
    parts.append(f"cap_hits={summary['cap_hits']}")
    parts.append(f"wall={summary['wall_seconds']:.2f}s")
    return " ".join(parts)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    bench, scheme = resolve(cfg, args.seed, args.workers, args.allow_horizon_override)
    root = Path(args.out or cfg.get("output") or os.environ.get(OUTPUT_ENV, "runs"))
    name = cfg.get("name") or Path(args.config).stem
    out = root / name if args.out is None else root
    if bench.reference is None and not bench.certified:
        print(f"warning: closed-form candidate for {bench.name} failed certification "
              f"(pde residual {bench.residual:.3g})", file=sys.stderr)
        if cfg.get("self_convergent"):
            fine, gap = self_convergent_reference(bench, scheme)
            print(f"self-convergent reference built (coarse/fine gap {gap:.3g})", file=sys.stderr)
            bench.reference = lambda t, x, g=fine: g.interpolate(x)
            bench.params["self_convergent_gap"] = gap
    sweep = cfg.get("sweep") or {}
    cases = [(None, scheme)]
    if sweep:
        key, vals = next(iter(sweep.items()))
        cases = [(f"{key}={v}", replace(scheme, **{key: v})) for v in vals]
    rows = []
    for label, sc in cases:
        driver = bench.make_driver(sc.n_pieces, sc.degree)
        start = time.perf_counter()
        result = run_scheme(bench.problem, driver, None, sc)
        wall = time.perf_counter() - start
        target = out if label is None else out / label.replace("=", "_")
        summary = write_outputs(target, bench, sc, result, wall, cfg)
        print(_summary_line(f"{bench.name}" + (f" {label}" if label else ""), summary))
        rows.append((label, summary))
    if sweep:
        with open(out / "sweep.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([next(iter(sweep)), "max_abs_error", "mean_abs_error", "cap_hits", "wall_seconds"])
            for (label, s) in rows:
                w.writerow([label.split("=", 1)[1], s.get("max_abs_error", ""),
                            s.get("mean_abs_error", ""), s["cap_hits"], s["wall_seconds"]])
    return 0


def cmd_bounds(args) -> int:
    h_o = explosion_horizon(args.C, args.degree, args.M)
    print(json.dumps({"h_o": h_o, "M_h_o": growth_bound(args.C, args.degree, args.M, h_o)}))
    return 0


def cmd_list(args) -> int:
    for name in sorted(REGISTRY):
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="branchbsde", description="Branching-diffusion solver for semilinear PDEs")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a JSON config")
    run.add_argument("config", help="path to the JSON config")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--workers", type=int, default=None)
    run.add_argument("--out", default=None, help=f"output directory (default ${OUTPUT_ENV}/<name>)")
    run.add_argument("--allow-horizon-override", action="store_true")
    run.set_defaults(func=cmd_run)
    b = sub.add_parser("bounds", help="explosion horizon and growth bound")
    b.add_argument("--C", type=float, required=True)
    b.add_argument("--degree", type=int, required=True)
    b.add_argument("--M", type=float, required=True)
    b.set_defaults(func=cmd_bounds)
    ls = sub.add_parser("list", help="list benchmarks")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HorizonError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_GATE
    except TreeOverflowError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_OVERFLOW
    except ValueError as exc:
        if args.command == "bounds":
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        raise


if __name__ == "__main__":
    sys.exit(main())
