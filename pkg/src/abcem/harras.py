"""Opinion-driven traders on a periodic square lattice.

Each agent forms an opinion from its neighbors' expected actions (weighted by
adaptive trust k_ij), a public news signal (weighted by the shared trust u)
and private noise, and trades a fixed fraction g of its cash or shares when
the opinion crosses its personal threshold.

Time indexing: decisions of round k (news n_k, expectations E_k) produce the
excess demand ED_k and the price S_{k+1} = S_k exp(ED_k).  The update run
after S_{k+1} is known does, in order:

1. mean and variance of ED advance with the previous excess demand ED_{k-1};
2. u and k_ij advance with ED_k / sigma_ED, paired with the news n_{k-1} and
   the expectations E_{k-1} of the round before;
3. the round-k trades settle at S_{k+1};
4. neighbor expectations become the neighbors' round-k actions (kept at their
   initial values before the first decision round);
5. fresh news, a random update order and private noise; new decisions and
   trading volumes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .population import TRADING_VOLUME, Population

OPINION_VARIANTS = ("normalized-quarter", "unnormalized")


@dataclass(frozen=True)
class HarrasParams:
    C1: float = 0.0
    C2: float = 1.0
    C3: float = 1.0
    Omega: float = 2.0
    g: float = 0.02
    alpha: float = 0.95
    lam: float = 0.25
    opinion_variant: str = "normalized-quarter"
    sigma_floor: float = 1e-8
    w0: float = 1.0
    q0: float = 1.0
    var0: float = 0.1

    def __post_init__(self):
        if min(self.C1, self.C2, self.C3, self.Omega) < 0:
            raise ValueError("C1, C2, C3 and Omega must be non-negative")
        if not 0 < self.g < 1:
            raise ValueError("g must lie in (0, 1)")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.opinion_variant not in OPINION_VARIANTS:
            raise ValueError(f"opinion_variant must be one of {OPINION_VARIANTS}")
        if not self.sigma_floor > 0:
            raise ValueError("sigma_floor must be positive")

    @property
    def neighbor_factor(self) -> float:
        return 0.25 if self.opinion_variant == "normalized-quarter" else 1.0


@dataclass(frozen=True)
class MarketFeedback:
    u: float = 0.0
    var_ed: float = 0.1
    mean_ed: float = 0.0
    prev_ed: float = 0.0    # ED of the round before the latest one
    prev_news: float = 0.0  # news of the round before the latest one
    alpha: float = 0.95


def build_lattice(n: int) -> np.ndarray:
    """Neighbor table (n, 4) in the order up, down, left, right, with wraparound."""
    side = math.isqrt(n) if n > 0 else 0
    if n < 1 or side * side != n:
        raise ValueError(f"number of agents must be a perfect square, got {n}")
    idx = np.arange(n).reshape(side, side)
    return np.stack([np.roll(idx, 1, axis=0).ravel(), np.roll(idx, -1, axis=0).ravel(),
                     np.roll(idx, 1, axis=1).ravel(), np.roll(idx, -1, axis=1).ravel()],
                    axis=1)


def compute_opinion(c1, c2, c3, k, expectations, u, news, eps,
                    variant: str = "normalized-quarter") -> float:
    factor = 0.25 if variant == "normalized-quarter" else 1.0
    social = float(np.dot(np.asarray(k, dtype=float), np.asarray(expectations, dtype=float)))
    return c1 * factor * social + c2 * u * news + c3 * eps


def decide_action(psi: float, threshold: float) -> int:
    if psi > threshold:
        return 1
    if psi < -threshold:
        return -1
    return 0


def trading_volume(sigma: int, g: float, w: float, q: float, S: float) -> float:
    if sigma > 0:
        return max(g * w / S, 0.0)
    if sigma < 0:
        return g * q
    return 0.0


def update_feedback(fb: MarketFeedback, ed_now: float, news_now: float, k,
                    expectations_prev, floor: float = 1e-8):
    """Smoothing recursions once the excess demand ``ed_now`` is realized.

    Mean and variance advance with ``fb.prev_ed``; u and the trust weights
    ``k`` advance with ``ed_now / sigma_ED`` paired with ``fb.prev_news`` and
    ``expectations_prev``.  ``news_now`` is the news behind ``ed_now`` and is
    carried forward for the next update.  Returns (feedback, new k).
    """
    a = fb.alpha
    mean = a * fb.mean_ed + (1 - a) * fb.prev_ed
    var = a * fb.var_ed + (1 - a) * (fb.prev_ed - mean) ** 2
    scaled = ed_now / max(math.sqrt(var), floor)
    u = a * fb.u + (1 - a) * fb.prev_news * scaled
    k_new = a * np.asarray(k, dtype=float) + (1 - a) * np.asarray(expectations_prev) * scaled
    return MarketFeedback(u=u, var_ed=var, mean_ed=mean, prev_ed=ed_now,
                          prev_news=news_now, alpha=a), k_new


def settle_trade(w: float, q: float, sigma: int, v: float, S: float) -> tuple[float, float]:
    return w - sigma * v * S, q + sigma * v


def update_neighbor_expectations(actions, lattice) -> np.ndarray:
    return np.asarray(actions, dtype=float)[lattice]


@njit(cache=True)
def _decide_kernel(order, eps, news, u, factor, c1, c2, c3, threshold, k, E,
                   g, w, q, S, sigma, v):
    for j in range(order.size):
        i = order[j]
        social = 0.0
        for d in range(4):
            social += k[i, d] * E[i, d]
        psi = c1[i] * factor * social + c2[i] * u * news + c3[i] * eps[j]
        if psi > threshold[i]:
            sigma[i] = 1.0
            v[i] = max(g * w[i] / S, 0.0)
        elif psi < -threshold[i]:
            sigma[i] = -1.0
            v[i] = g * q[i]
        else:
            sigma[i] = 0.0
            v[i] = 0.0


class HarrasPopulation(Population):
    kind = "AgentHarras"
    capabilities = frozenset({TRADING_VOLUME})

    def __init__(self, name, params: HarrasParams, lattice, c1, c2, c3, threshold, k, E):
        super().__init__(name)
        self.params = params
        self.lattice = np.asarray(lattice, dtype=np.int64)
        n = self.lattice.shape[0]
        self.c1, self.c2, self.c3 = (np.asarray(c, dtype=float) for c in (c1, c2, c3))
        self.threshold = np.asarray(threshold, dtype=float)
        self.k = np.asarray(k, dtype=float).reshape(n, 4)
        self.E = np.asarray(E, dtype=float).reshape(n, 4)
        self.w = np.full(n, params.w0)
        self.q = np.full(n, params.q0)
        self.sigma = np.zeros(n)
        self.v = np.zeros(n)
        self.feedback = MarketFeedback(u=0.0, var_ed=params.var0, mean_ed=0.0,
                                       alpha=params.alpha)
        self.news = 0.0  # news behind the current decisions
        self.E_prev = self.E  # expectations of the decision round before
        self.rounds = 0

    @property
    def size(self):
        return self.sigma.size

    def cash(self):
        return self.w

    def stock(self):
        return self.q

    def decision(self):
        return self.sigma

    def trading_volume(self):
        return self.v

    def excess_demand_sum(self, price):
        # microscopic excess demand in units of stock per agent
        return float(np.dot(self.sigma, self.v)) / self.params.lam

    def signed_volume_sum(self):
        return float(np.dot(self.sigma, self.v))

    def update(self, market, rng):
        p = self.params
        self.feedback, self.k = update_feedback(self.feedback, market.excess_demand, self.news,
                                                self.k, self.E_prev, p.sigma_floor)
        self.E_prev = self.E
        u = self.feedback.u

        S = market.price
        trade = self.sigma * self.v
        self.w -= trade * S
        self.q += trade

        if self.rounds > 0:
            self.E = update_neighbor_expectations(self.sigma, self.lattice)

        self.news = rng.normal(0.0, 1.0)
        order = np.asarray(rng.permutation(self.size), dtype=np.int64)
        eps = np.asarray(rng.normal_array(0.0, 1.0, self.size), dtype=float)
        _decide_kernel(order, eps, self.news, u, p.neighbor_factor, self.c1, self.c2,
                       self.c3, self.threshold, self.k, self.E, p.g, self.w, self.q, S,
                       self.sigma, self.v)
        self.rounds += 1

    def observables(self):
        n = self.size
        return {f"{self.name}_buy_fraction": float(np.count_nonzero(self.sigma > 0)) / n,
                f"{self.name}_sell_fraction": float(np.count_nonzero(self.sigma < 0)) / n,
                f"{self.name}_news_trust": self.feedback.u,
                f"{self.name}_cash_mean": float(self.w.mean()),
                f"{self.name}_stock_mean": float(self.q.mean())}


def init_harras_population(n: int, params: HarrasParams, rng,
                           name: str = "harras") -> HarrasPopulation:
    """Draw blockwise: c1, c2, c3, thresholds, trust k (n x 4), expectations (n x 4)."""
    lattice = build_lattice(n)
    c1 = params.C1 * rng.uniform_array(0.0, 1.0, n)
    c2 = params.C2 * rng.uniform_array(0.0, 1.0, n)
    c3 = params.C3 * rng.uniform_array(0.0, 1.0, n)
    threshold = params.Omega * rng.uniform_array(0.0, 1.0, n)
    k = rng.uniform_array(0.0, 1.0, 4 * n)
    E = rng.discrete_uniform_array([-1.0, 0.0, 1.0], 4 * n).astype(float)
    return HarrasPopulation(name, params, lattice, c1, c2, c3, threshold, k, E)
