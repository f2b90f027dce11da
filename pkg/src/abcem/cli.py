"""Command line: run, sweep, analyze, bench.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from . import analysis
from .config import (ConfigError, bundled_config, expand_sweep, parse_config,
                     resolve_seed, validate_assembly, with_overrides)
from .engine import SimulationError, run_simulation
from .output import FORMATS, load_run, run_directory, write_run

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2
STATS = ("kurtosis", "acf", "qq", "hist")
BENCH_MODELS = {"cross": "cross_base", "harras": "harras_basic", "lls": "lls_basic"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(text: str) -> list:
    try:
        values = [int(float(v)) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers: {text!r}")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("list entries must be positive integers")
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="abcem", description="Agent-based market simulator")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    run = sub.add_parser("run", help="run a configuration")
    run.add_argument("config", help="XML file or name of a bundled configuration")
    run.add_argument("--seed", type=int, help="master seed (overrides file and environment)")
    run.add_argument("--reps", type=int, help="number of repetitions")
    run.add_argument("--out", help="output directory")
    run.add_argument("--format", choices=FORMATS, help="output format")

    sweep = sub.add_parser("sweep", help="run the cartesian product of parameter values")
    sweep.add_argument("config")
    sweep.add_argument("--param", action="append", required=True, metavar="PATH=V1,V2,...",
                       help="element path and comma-separated values; repeatable")
    sweep.add_argument("--seed", type=int)
    sweep.add_argument("--reps", type=int)
    sweep.add_argument("--out")
    sweep.add_argument("--format", choices=FORMATS)

    ana = sub.add_parser("analyze", help="statistics of recorded series")
    ana.add_argument("run_dir")
    ana.add_argument("--stats", default="kurtosis,acf",
                     help=f"comma-separated subset of {','.join(STATS)}")
    ana.add_argument("--series", default="price", help="series to analyze")
    ana.add_argument("--lags", type=int, default=20)
    ana.add_argument("--bins", type=int, default=50)

    bench = sub.add_parser("bench", help="timing table for scaling studies")
    bench.add_argument("--model", choices=sorted(BENCH_MODELS), default="cross")
    bench.add_argument("--agents", type=_int_list, default=[1000])
    bench.add_argument("--steps", type=_int_list, default=[1000])
    bench.add_argument("--seed", type=int)
    bench.add_argument("--out", help="CSV file (default: standard output)")
    return parser


def _load(spec: str):
    path = spec
    if not os.path.exists(path):
        path = bundled_config(spec)
    return validate_assembly(parse_config(path))


def _apply_run_options(config, args):
    config = resolve_seed(config, args.seed)
    if args.reps is not None:
        if args.reps < 1:
            raise ConfigError("--reps must be positive")
        config = with_overrides(config, {"settings/repetitions": args.reps})
    return config


def _run_plan(config, out_dir, fmt) -> list:
    reps = config.run.repetitions
    locations = []
    for index in range(reps):
        output = run_simulation(config, index)
        locations.append(write_run(output, run_directory(out_dir, index, reps), fmt))
    return locations


def _cmd_run(args) -> int:
    config = _apply_run_options(_load(args.config), args)
    out_dir = args.out or config.output.directory
    fmt = args.format or config.output.format
    for location in _run_plan(config, out_dir, fmt):
        print(location)
    return EXIT_OK


def _parse_params(items) -> dict:
    params = {}
    for item in items:
        path, sep, values = item.partition("=")
        if not sep or not path.strip() or not values.strip():
            raise ConfigError(f"--param expects PATH=V1,V2,..., got {item!r}")
        params[path.strip()] = [v.strip() for v in values.split(",") if v.strip()]
    return params


def _cmd_sweep(args) -> int:
    config = _apply_run_options(_load(args.config), args)
    out_dir = args.out or config.output.directory
    fmt = args.format or config.output.format
    cases = expand_sweep(config, _parse_params(args.param))
    for index, (assignment, case) in enumerate(cases):
        validate_assembly(case)
        case_dir = os.path.join(out_dir, f"sweep_{index:03d}")
        os.makedirs(case_dir, exist_ok=True)
        with open(os.path.join(case_dir, "assignment.json"), "w") as fh:
            json.dump(assignment, fh, indent=2, sort_keys=True)
            fh.write("\n")
        _run_plan(case, case_dir, fmt)
        print(case_dir)
    return EXIT_OK


def _run_locations(run_dir: str) -> list:
    if not os.path.exists(run_dir):
        raise ConfigError(f"no run output at {run_dir}")
    if os.path.isdir(run_dir):
        runs = sorted(os.path.join(run_dir, d) for d in os.listdir(run_dir)
                      if d.startswith("run_") and os.path.isdir(os.path.join(run_dir, d)))
        if runs:
            return runs
    return [run_dir]


def _analyze_one(location, stats, series_name, lags, bins) -> dict:
    data = load_run(location)
    if series_name not in data["series"]:
        raise ConfigError(f"{location}: no series {series_name!r}; "
                          f"available: {sorted(data['series'])}")
    values = data["series"][series_name]
    returns = analysis.log_returns(values) if series_name == "price" else np.diff(values)
    out_dir = location if os.path.isdir(location) else os.path.dirname(location)
    out_dir = os.path.join(out_dir, "analysis")
    result = {}
    if "kurtosis" in stats:
        s = analysis.summary_stats(returns)
        result["kurtosis"] = s.excess_kurtosis
        analysis.write_statistic_csv(os.path.join(out_dir, "summary.csv"),
                                     ["mean", "variance", "excess_kurtosis", "count"],
                                     [[s.mean, s.variance, s.excess_kurtosis, s.count]])
    if "acf" in stats:
        raw = analysis.autocorrelation(returns, lags)
        absolute = analysis.autocorrelation(np.abs(returns), lags)
        result["acf"] = (raw, absolute)
        analysis.write_statistic_csv(os.path.join(out_dir, "acf.csv"), ["lag", "raw", "absolute"],
                                     np.column_stack([np.arange(lags + 1), raw, absolute]))
    if "qq" in stats:
        analysis.write_statistic_csv(os.path.join(out_dir, "qq.csv"),
                                     ["theoretical", "empirical"], analysis.qq_points(returns))
    if "hist" in stats:
        counts, edges = analysis.histogram(returns, bins)
        analysis.write_statistic_csv(os.path.join(out_dir, "hist.csv"),
                                     ["left", "right", "count"],
                                     np.column_stack([edges[:-1], edges[1:], counts]))
    return result


def _cmd_analyze(args) -> int:
    stats = [s.strip() for s in args.stats.split(",") if s.strip()]
    unknown = sorted(set(stats) - set(STATS))
    if unknown or not stats:
        raise ConfigError(f"--stats must be a subset of {','.join(STATS)}, got {args.stats!r}")
    if args.lags < 1 or args.bins < 1:
        raise ConfigError("--lags and --bins must be positive")
    results = [_analyze_one(loc, stats, args.series, args.lags, args.bins)
               for loc in _run_locations(args.run_dir)]
    print(f"runs: {len(results)}")
    if "kurtosis" in stats:
        mean, err = analysis.aggregate_runs([r["kurtosis"] for r in results])
        print(f"excess kurtosis: {mean:.6g} +- {err:.3g}")
    if "acf" in stats:
        raw = np.mean([r["acf"][0] for r in results], axis=0)
        absolute = np.mean([r["acf"][1] for r in results], axis=0)
        print(f"max |acf| of returns, lags 1..{args.lags}: {np.max(np.abs(raw[1:])):.4g}")
        print(f"acf of absolute returns at lag 1: {absolute[1]:.4g}")
    return EXIT_OK


def _cmd_bench(args) -> int:
    base = parse_config(bundled_config(BENCH_MODELS[args.model]))
    if args.seed is not None:
        base = with_overrides(base, {"settings/seed": args.seed})
    # untimed warm-up so loading the compiled kernels is not charged to the first row
    warm = {"settings/numSteps": 2}
    warm["agents/agent/group/count" if args.model == "lls" else "agents/agent/count"] = \
        1 if args.model != "harras" else 4
    run_simulation(validate_assembly(with_overrides(base, warm)), 0)
    rows = []
    for agents in args.agents:
        for steps in args.steps:
            over = {"settings/numSteps": steps}
            if args.model == "lls":
                over["agents/agent/group/count"] = agents
            else:
                over["agents/agent/count"] = agents
            config = validate_assembly(with_overrides(base, over))
            rows.append((args.model, agents, steps, run_simulation(config, 0).wall_time))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["model", "agents", "steps", "wall_time"])
    for model, agents, steps, wall in rows:
        writer.writerow([model, agents, steps, format(wall, ".6g")])
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        with open(args.out, "w") as fh:
            fh.write(buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "sweep": _cmd_sweep, "analyze": _cmd_analyze, "bench": _cmd_bench}


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, RuntimeError, ArithmeticError, OSError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
