"""Stylized-fact statistics on price and wealth series."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from statistics import NormalDist

import numpy as np


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    variance: float
    excess_kurtosis: float
    count: int


def log_returns(prices) -> np.ndarray:
    p = np.asarray(prices, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise ValueError("need at least two prices")
    if np.any(~(p > 0)):
        raise ValueError("prices must be positive")
    return np.diff(np.log(p))


def excess_kurtosis(samples) -> float:
    """m4 / m2^2 - 3 with population (biased) central moments."""
    x = np.asarray(samples, dtype=float)
    if x.size < 4:
        raise ValueError("excess kurtosis needs at least 4 samples")
    d = x - x.mean()
    m2 = np.mean(d * d)
    if not m2 > 0:
        raise ValueError("excess kurtosis of a sample with zero variance")
    return float(np.mean(d ** 4) / (m2 * m2) - 3.0)


def summary_stats(samples) -> SummaryStats:
    x = np.asarray(samples, dtype=float)
    var = float(np.var(x))
    kurt = excess_kurtosis(x) if var > 0 and x.size >= 4 else float("nan")
    return SummaryStats(float(x.mean()), var, kurt, int(x.size))


def autocorrelation(series, max_lag: int) -> np.ndarray:
    """rho(l) = sum_t d_t d_{t+l} / sum_t d_t^2 for l = 0..max_lag."""
    x = np.asarray(series, dtype=float)
    if max_lag < 0 or x.size <= max_lag:
        raise ValueError("series must be longer than max_lag")
    d = x - x.mean()
    denom = np.dot(d, d)
    if not denom > 0:
        raise ValueError("autocorrelation of a series with zero variance")
    n = d.size
    return np.array([np.dot(d[: n - lag], d[lag:]) / denom for lag in range(max_lag + 1)])


_STANDARD_NORMAL = NormalDist()


def normal_quantile(p: float) -> float:
    if not 0 < p < 1:
        raise ValueError("probability must lie in (0, 1)")
    return _STANDARD_NORMAL.inv_cdf(p)


def qq_points(samples) -> np.ndarray:
    """(theoretical, empirical) pairs; empirical values are standardized and sorted."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("qq plot needs at least two samples")
    sd = x.std()
    if not sd > 0:
        raise ValueError("qq plot of a sample with zero variance")
    emp = np.sort((x - x.mean()) / sd)
    theo = np.array([normal_quantile((i + 0.5) / n) for i in range(n)])
    return np.column_stack([theo, emp])


def histogram(samples, bins: int):
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("histogram of an empty sample")
    if bins < 1:
        raise ValueError("bins must be positive")
    return np.histogram(x, bins=bins)


def aggregate_runs(values) -> tuple[float, float]:
    """Mean and standard error (sample std / sqrt(runs)); one run gives stderr 0."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("no runs to aggregate")
    if v.size == 1:
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def group_wealth_series(wealth, groups) -> np.ndarray:
    """Per-step group totals from a (steps, agents) wealth matrix.

    ``groups`` holds one group label per agent; the result has one column per
    label in ascending label order.
    """
    w = np.asarray(wealth, dtype=float)
    if w.ndim == 1:
        w = w[None, :]
    g = np.asarray(groups)
    if g.ndim != 1 or g.size != w.shape[1]:
        raise ValueError("group assignment must give one label per agent")
    labels = np.unique(g)
    return np.column_stack([w[:, g == lab].sum(axis=1) for lab in labels])


def write_statistic_csv(path, header, rows) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format(float(v), ".17g") for v in np.atleast_1d(row)])
