"""LLS boundary-decision fractions, time-continuous variants and finite size.

    python3 scripts/lls_experiments.py boundary --runs 100
    python3 scripts/lls_experiments.py time-continuous --runs 100
    python3 scripts/lls_experiments.py finite-size --runs 10 --out lls_groups
"""
import argparse
import os

import numpy as np

from abcem import analysis
from abcem.config import bundled_config, parse_config, with_overrides
from abcem.engine import run_simulation


def config(name, **overrides):
    base = parse_config(bundled_config(name))
    return with_overrides(base, overrides) if overrides else base


def boundary_fraction(cfg, runs):
    per_run = [np.nanmean(run_simulation(cfg, i).observables["lls_boundary_fraction"][1:])
               for i in range(runs)]
    return analysis.aggregate_runs(per_run)


def boundary(args):
    for sigma in (0.0, 0.2):
        mean, err = boundary_fraction(config("lls_basic", **{"agents/agent/sigma_gamma": sigma}),
                                      args.runs)
        print(f"sigma_gamma={sigma}: boundary fraction {mean:.4f} +- {err:.4f}")


def time_continuous(args):
    for mode in ("scaled-memory", "fixed-memory"):
        for dt in (1.0, 0.1, 0.01):
            cfg = config("lls_basic", **{"settings/deltaT": dt,
                                         "settings/numSteps": int(round(200 / dt)),
                                         "agents/agent/scaling_mode": mode})
            mean, err = boundary_fraction(cfg, args.runs)
            print(f"{mode:<13} dt={dt:<5} boundary fraction {mean:.4f} +- {err:.4f}")


def finite_size(args):
    os.makedirs(args.out, exist_ok=True)
    for per_group in (33, 333):
        cfg = config("lls_three_groups",
                     **{f"agents/agent/group[{g}]/count": per_group for g in range(3)})
        kurt = []
        for i in range(args.runs):
            out = run_simulation(cfg, i)
            kurt.append(analysis.excess_kurtosis(analysis.log_returns(out.price_series)))
            if i == 0:
                cols = [out.observables[f"lls_wealth_group_{g}"] for g in range(3)]
                analysis.write_statistic_csv(
                    os.path.join(args.out, f"group_wealth_N{3 * per_group}.csv"),
                    ["step", "group_0", "group_1", "group_2"],
                    np.column_stack([np.arange(len(cols[0]))] + cols))
        mean, err = analysis.aggregate_runs(kurt)
        print(f"N={3 * per_group}: excess kurtosis {mean:.3f} +- {err:.3f}")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("experiment", choices=["boundary", "time-continuous", "finite-size"])
    parser.add_argument("--runs", type=int, default=100)
    parser.add_argument("--out", default="lls_groups")
    args = parser.parse_args()
    {"boundary": boundary, "time-continuous": time_continuous, "finite-size": finite_size}[
        args.experiment](args)


if __name__ == "__main__":
    main()
