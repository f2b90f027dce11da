"""Harras model fat tails and volatility clustering.

    python3 scripts/harras_experiments.py --runs 10
"""
import argparse

import numpy as np

from abcem import analysis
from abcem.config import bundled_config, parse_config
from abcem.engine import run_simulation


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--runs", type=int, default=10)
    args = parser.parse_args()
    cfg = parse_config(bundled_config("harras_basic"))
    for i in range(args.runs):
        r = analysis.log_returns(run_simulation(cfg, i).price_series)
        print(f"run {i}: kurtosis {analysis.excess_kurtosis(r):8.3f}   "
              f"abs acf1 {analysis.autocorrelation(np.abs(r), 1)[1]:.4f}")


if __name__ == "__main__":
    main()
