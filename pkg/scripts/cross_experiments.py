"""Cross model stylized facts, finite size, SDE drift table and wealth kurtosis.

    python3 scripts/cross_experiments.py facts --runs 20
    python3 scripts/cross_experiments.py finite-size --agents 100,100000
    python3 scripts/cross_experiments.py drift --runs 100
    python3 scripts/cross_experiments.py wealth --runs 100
"""
import argparse

import numpy as np

from abcem import analysis
from abcem.config import bundled_config, parse_config, with_overrides
from abcem.engine import run_simulation


def config(name, **overrides):
    base = parse_config(bundled_config(name))
    return with_overrides(base, overrides) if overrides else base


def returns(cfg, runs):
    return [analysis.log_returns(run_simulation(cfg, i).price_series) for i in range(runs)]


def describe(label, rets, lags=20):
    kurt, err = analysis.aggregate_runs([analysis.excess_kurtosis(r) for r in rets])
    raw = np.mean([analysis.autocorrelation(r, lags) for r in rets], axis=0)
    absolute = np.mean([analysis.autocorrelation(np.abs(r), lags) for r in rets], axis=0)
    print(f"{label:<24} kurtosis {kurt:8.3f} +- {err:.3f}   "
          f"max|acf| {np.max(np.abs(raw[1:])):.4f}   acf1 {raw[1]:+.4f}   abs acf1 {absolute[1]:.4f}")


def facts(args):
    for name in ("cross_base", "cross_theta2"):
        describe(name, returns(config(name), args.runs))


def finite_size(args):
    for n in args.agents:
        describe(f"N={n}", returns(config("cross_base", **{"agents/agent/count": n}), args.runs))


def drift(args):
    for name in ("cross_sde_f1", "cross_sde_f2"):
        for theta in (0, 2):
            cfg = config(name, **{"priceCalculatorSettings/theta": theta})
            describe(f"{name} theta={theta}", returns(cfg, args.runs))


def wealth(args):
    for gamma in (0.25, 0.5, 0.75, 1.0):
        cfg = config("cross_wealth", **{"agents/agent/gamma": gamma})
        final = np.array([run_simulation(cfg, i).observables["cross_wealth_mean"][-1]
                          for i in range(args.runs)])
        print(f"gamma={gamma:<5} final-wealth kurtosis {analysis.excess_kurtosis(final):8.3f}   "
              f"median {np.median(final):.4g}   min {final.min():.3g}   max {final.max():.3g}")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("experiment", choices=["facts", "finite-size", "drift", "wealth"])
    parser.add_argument("--runs", type=int, default=20)
    parser.add_argument("--agents", type=lambda s: [int(float(v)) for v in s.split(",")],
                        default=[100, 100_000])
    args = parser.parse_args()
    {"facts": facts, "finite-size": finite_size, "drift": drift, "wealth": wealth}[
        args.experiment](args)


if __name__ == "__main__":
    main()
