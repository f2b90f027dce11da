"""Threshold agents with herding and inaction pressure.

Each agent holds a binary position sigma in {-1, +1}.  Herding pressure c
accumulates while the agent's position opposes the aggregate excess demand;
the agent switches when c exceeds its tolerance beta or when the price
leaves its inaction band around the price of its last switch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .population import Population


@dataclass(frozen=True)
class CrossParams:
    A1: float = 0.1
    A2: float = 0.3
    b1: float = 25.0
    b2: float = 100.0
    wealth: bool = False
    r: float = 0.01
    gamma: float = 0.5

    def __post_init__(self):
        if not 0 < self.A1 < self.A2:
            raise ValueError("need 0 < A1 < A2")
        if not 0 < self.b1 < self.b2:
            raise ValueError("need 0 < b1 < b2")
        if self.wealth and not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")


@dataclass
class CrossAgent:
    sigma: int
    c: float
    m: float
    alpha: float
    beta: float
    w: float = 1.0


def inaction_interval(m: float, alpha: float) -> tuple[float, float]:
    return m / (1.0 + alpha), m * (1.0 + alpha)


def update_herding_pressure(c: float, sigma: int, ed: float, dt: float) -> float:
    if sigma * ed < 0:
        return c + dt * abs(ed)
    return c


def update_cross_agent(agent: CrossAgent, S: float, ed: float, dt: float) -> bool:
    """Apply one update in place; returns True if the agent switched."""
    agent.c = update_herding_pressure(agent.c, agent.sigma, ed, dt)
    lo, hi = inaction_interval(agent.m, agent.alpha)
    if agent.c > agent.beta or S < lo or S > hi:
        agent.sigma = -agent.sigma
        agent.c = 0.0
        agent.m = S
        return True
    return False


def update_cross_wealth(w: float, gamma: float, r: float, S_now: float,
                        S_prev: float, dt: float) -> float:
    if not S_now > 0:
        raise FloatingPointError("wealth update needs a positive price")
    w_new = w + dt * ((1.0 - gamma) * r + gamma * (S_now - S_prev) / (dt * S_now)) * w
    if not np.isfinite(w_new):
        raise FloatingPointError("non-finite wealth")
    return w_new


@njit(cache=True)
def _update_kernel(sigma, c, m, alpha, beta, S, ed, dt):
    switches = 0
    push = dt * abs(ed)
    for i in range(sigma.size):
        if sigma[i] * ed < 0:
            c[i] += push
        a = 1.0 + alpha[i]
        if c[i] > beta[i] or S < m[i] / a or S > m[i] * a:
            sigma[i] = -sigma[i]
            c[i] = 0.0
            m[i] = S
            switches += 1
    return switches


@njit(cache=True)
def _seq_mean(x):
    # left-to-right summation, shared with the compiled run loop
    acc = 0.0
    for i in range(x.size):
        acc += x[i]
    return acc / x.size


class CrossPopulation(Population):
    kind = "AgentCross"
    capabilities = frozenset()

    def __init__(self, name, params: CrossParams, sigma, c, m, alpha, beta, w=None):
        super().__init__(name)
        self.params = params
        self.sigma = np.asarray(sigma, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.m = np.asarray(m, dtype=float)
        self.alpha = np.asarray(alpha, dtype=float)
        self.beta = np.asarray(beta, dtype=float)
        self.w = None if w is None else np.asarray(w, dtype=float)
        self.switches = 0

    @property
    def size(self):
        return self.sigma.size

    def agent(self, i: int) -> CrossAgent:
        w = 1.0 if self.w is None else float(self.w[i])
        return CrossAgent(int(self.sigma[i]), float(self.c[i]), float(self.m[i]),
                          float(self.alpha[i]), float(self.beta[i]), w)

    def cash(self):
        return self.w if self.w is not None else np.zeros(self.size)

    def stock(self):
        return np.zeros(self.size)

    def decision(self):
        return self.sigma

    def excess_demand_sum(self, price):
        return float(self.sigma.sum())

    def update(self, market, rng):
        dt = market.clock.delta_t
        self.switches = _update_kernel(self.sigma, self.c, self.m, self.alpha,
                                       self.beta, market.price, market.excess_demand, dt)
        if self.w is not None:
            p = self.params
            S, S_prev = market.price, market.prev_price
            self.w *= 1.0 + dt * ((1.0 - p.gamma) * p.r + p.gamma * (S - S_prev) / (dt * S))

    def observables(self):
        obs = {f"{self.name}_position_mean": _seq_mean(self.sigma),
               f"{self.name}_switch_fraction": self.switches / self.size}
        if self.w is not None:
            obs[f"{self.name}_wealth_mean"] = _seq_mean(self.w)
        return obs


def init_cross_population(n: int, params: CrossParams, rng, start_price: float,
                          dt: float, name: str = "cross") -> CrossPopulation:
    """Draw the agents blockwise: all alpha, all beta, all c, all sigma."""
    if n < 1:
        raise ValueError("a population needs at least one agent")
    B1, B2 = params.b1 * dt, params.b2 * dt
    alpha = rng.uniform_array(params.A1, params.A2, n)
    beta = rng.uniform_array(B1, B2, n)
    c = B1 + rng.uniform_array(0.0, 1.0, n) * (B2 - B1)
    sigma = rng.discrete_uniform_array([-1.0, 1.0], n).astype(float)
    m = np.full(n, float(start_price))
    w = np.ones(n) if params.wealth else None
    return CrossPopulation(name, params, sigma, c, m, alpha, beta, w)
