"""Command-line entry point: ``popapprox <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 a checked invariant was violated.
"""
from __future__ import annotations

import argparse
import json
import math
import sys

from .errors import (ConfigError, DegenerateVariance, InvariantViolation, NoRoot, NonAttracting,
                     SolverError, SteinOverflow)
from .generator import solve_equilibrium
from .harness import DEFAULT_GRID, SweepConfig, emit_report, read_config, run_sweep
from .metrics import CSV_COLUMNS, local_limit_error
from .model import build_skeleton, built_in_names, make_model
from .montecarlo import empirical_transient_pmf, likelihood_ratio_experiment, simulate_path
from .stein import norm_bounds_check, stein_solution

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INVARIANT = 0, 2, 3, 4


def _param(text: str) -> tuple[str, float]:
    key, sep, val = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    try:
        return key.strip(), float(val)
    except ValueError:
        raise argparse.ArgumentTypeError(f"value for {key!r} is not a number: {val!r}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with the same keys as the flags")
    common.add_argument("--model", choices=built_in_names())
    common.add_argument("--param", action="append", type=_param, default=None, metavar="KEY=VAL",
                        help="model parameter; repeatable")
    common.add_argument("--delta", type=float)
    common.add_argument("--tol", type=float)
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"))

    p = argparse.ArgumentParser(prog="popapprox", description="Translated-Poisson approximation "
                                "of density dependent equilibria.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("stationary", parents=[common], help="solve for the equilibrium law at one n")
    s.add_argument("--n", type=int)

    s = sub.add_parser("approx", parents=[common], help="local approximation error at one n")
    s.add_argument("--n", type=int)

    s = sub.add_parser("sweep", parents=[common], help="errors over an n-grid with rate fits")
    s.add_argument("--n-grid", type=_int_list, dest="n_grid")
    s.add_argument("--workers", type=int)

    s = sub.add_parser("simulate", parents=[common], help="SSA path, or empirical law of Z(horizon)")
    s.add_argument("--n", type=int)
    s.add_argument("--init", type=int, help="initial state (default: round(nc))")
    s.add_argument("--horizon", type=float, help="end time (default: U)")
    s.add_argument("--reps", type=int, help="with reps > 1 report the empirical pmf")
    s.add_argument("--seed", type=int)

    s = sub.add_parser("lr-experiment", parents=[common], help="likelihood-ratio martingale study")
    s.add_argument("--n", type=int)
    s.add_argument("--i", type=int, dest="start", help="start index i (paths start at i-1)")
    s.add_argument("--reps", type=int)
    s.add_argument("--seed", type=int)

    s = sub.add_parser("stein-check", parents=[common], help="Stein solution residuals and bounds")
    s.add_argument("--mu", type=_float_list, help="comma-separated means (default 1,10,100,1000)")
    s.add_argument("--s", type=_int_list, dest="points", help="point sets (default 0, floor mu, 3 floor mu)")
    return p


_DEFAULTS = dict(model="sis", param=None, delta=None, tol=1e-10, out=None, format="json", n=400,
                 n_grid=list(DEFAULT_GRID), workers=1, init=None, horizon=None, reps=None, seed=0,
                 start=None, mu=[1.0, 10.0, 100.0, 1000.0], points=None)


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Flags override the config file, which overrides the defaults."""
    cfg = read_config(args.config) if args.config else {}
    out = {}
    for key, default in _DEFAULTS.items():
        val = getattr(args, key, None)
        if val is None:
            val = cfg.get({"param": "params", "start": "i", "points": "s"}.get(key, key), default)
        out[key] = val
    params = dict(cfg.get("params", {}))
    if isinstance(out["param"], list):
        params.update(dict(out["param"]))
    elif isinstance(out["param"], dict):
        params.update(out["param"])
    out["params"] = params
    out["command"] = args.command
    return argparse.Namespace(**out)


def _model(a):
    model = make_model(a.model, a.params, delta=a.delta)
    return model, build_skeleton(model)


def _write(text: str, out) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_stationary(a) -> int:
    model, sk = _model(a)
    gen, pi = solve_equilibrium(model, sk, a.n, tol=a.tol)
    if a.format == "csv":
        lines = ["state,prob"] + [f"{k},{p!r}" for k, p in zip(pi.states.tolist(), pi.probs.tolist())]
        _write("\n".join(lines) + "\n", a.out)
    else:
        _write(pi.to_json() + "\n", a.out)
    return EXIT_OK


def _cmd_approx(a) -> int:
    model, sk = _model(a)
    row = local_limit_error(model, sk, a.n, tol=a.tol).row()
    if a.format == "csv":
        _write(",".join(CSV_COLUMNS) + "\n" + ",".join(repr(float(row[c])) if c != "n" else str(row[c])
                                                     for c in CSV_COLUMNS) + "\n", a.out)
    else:
        _write(json.dumps(row, sort_keys=True) + "\n", a.out)
    return EXIT_OK


def _cmd_sweep(a) -> int:
    cfg = SweepConfig(model=a.model, params=a.params, n_grid=a.n_grid, tol=a.tol, seed=a.seed,
                      out=a.out, format=a.format, workers=a.workers, delta=a.delta)
    report = run_sweep(cfg)
    if a.out:
        for path in emit_report(report, a.format, a.out):
            print(path, file=sys.stderr)
    else:
        _write(report.to_csv() if a.format == "csv" else report.to_json(), None)
    return EXIT_OK


def _cmd_simulate(a) -> int:
    model, sk = _model(a)
    init = int(round(a.n * sk.c)) if a.init is None else a.init
    horizon = sk.U if a.horizon is None else a.horizon
    reps = 1 if a.reps is None else a.reps
    if reps > 1:
        emp = empirical_transient_pmf(model, a.n, init, horizon, reps, a.seed)
        if a.format == "csv":
            lines = ["state,prob,stderr"] + [f"{k},{p!r},{e!r}" for k, p, e in
                                             zip(emp.states.tolist(), emp.probs.tolist(), emp.stderr.tolist())]
            _write("\n".join(lines) + "\n", a.out)
        else:
            _write(emp.to_json() + "\n", a.out)
        return EXIT_OK
    path = simulate_path(model, a.n, init, horizon, a.seed)
    if a.format == "csv":
        lines = ["time,state,mark"] + [f"{t!r},{z},{j}" for t, z, j in
                                      zip(path.times.tolist(), path.states.tolist(), [0] + path.marks.tolist())]
        _write("\n".join(lines) + "\n", a.out)
    else:
        _write(json.dumps({"times": path.times.tolist(), "states": path.states.tolist(),
                           "marks": path.marks.tolist(), "seed": a.seed, "n": a.n,
                           "horizon": horizon, "absorbed": path.absorbed}) + "\n", a.out)
    return EXIT_OK


def _cmd_lr(a) -> int:
    model, sk = _model(a)
    start = int(round(a.n * sk.c)) if a.start is None else a.start
    reps = 20000 if a.reps is None else a.reps
    st = likelihood_ratio_experiment(model, sk, a.n, start, reps, a.seed)
    _write(st.to_json() + "\n", a.out)
    if st.increment_violations:
        print(f"increment bound violated on {st.increment_violations} paths", file=sys.stderr)
        return EXIT_INVARIANT
    return EXIT_OK


def _cmd_stein(a) -> int:
    records, failed = [], False
    for mu in a.mu:
        fm = math.floor(mu)
        points = a.points if a.points is not None else sorted({0, fm, 3 * fm})
        for s in points:
            rep = norm_bounds_check(stein_solution(mu, s))
            failed |= not rep.ok
            records.append({"mu": mu, "s": s, "ok": rep.ok, "monotone": rep.monotone,
                            "max_residual": rep.max_residual,
                            "checks": {c.name: [c.measured, c.bound, c.ok] for c in rep.checks}})
    _write(json.dumps(records, indent=2) + "\n", a.out)
    return EXIT_INVARIANT if failed else EXIT_OK


_COMMANDS = {"stationary": _cmd_stationary, "approx": _cmd_approx, "sweep": _cmd_sweep,
             "simulate": _cmd_simulate, "lr-experiment": _cmd_lr, "stein-check": _cmd_stein}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        a = _resolve(args)
        return _COMMANDS[a.command](a)
    except (ConfigError, NoRoot, NonAttracting, DegenerateVariance) as exc:
        print(f"popapprox: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, SteinOverflow) as exc:
        print(f"popapprox: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except InvariantViolation as exc:
        print(f"popapprox: invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
