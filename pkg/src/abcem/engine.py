"""Simulation loop: excess demand -> price -> agent updates -> recording.

Series alignment: ``price_series[k]`` is S_k and ``ed_series[k]`` is the
excess demand evaluated at state k, so ``price_series[k+1]`` was formed from
``ed_series[k]``.  Every series has ``num_steps + 1`` entries; entry 0 is
the initial state.  Observables are recorded for the initial state and after
each step's agent update.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from . import rng as _rng
from .config import SimulationConfig
from .cross import CrossPopulation, init_cross_population
from .harras import HarrasPopulation, init_harras_population
from .lls import init_lls_population
from .market import (CrossExponentialPrice, EulerMaruyamaPrice, ExcessDemandView,
                     MeanExcessDemand, VolumeExcessDemand,
                     make_price_calculator)
from .rng import RandomStream

_GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1


class SimulationError(RuntimeError):
    def __init__(self, message, step_index=None):
        super().__init__(message if step_index is None else f"step {step_index}: {message}")
        self.step_index = step_index


def derive_run_seed(master_seed: int, run_index: int) -> int:
    """SplitMix64 finalizer of ``master + (run_index + 1) * golden``.

    Both maps are bijections on 64-bit integers, so distinct run indices (for
    a fixed master) and distinct masters (for a fixed index) give distinct seeds.
    """
    if not 0 <= run_index < 2**64:
        raise ValueError("run_index out of range")
    z = (master_seed + (run_index + 1) * _GOLDEN) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


@dataclass(frozen=True)
class SimulationClock:
    step_index: int = 0
    delta_t: float = 1.0
    num_steps: int = 0

    def __post_init__(self):
        if not self.delta_t > 0:
            raise ValueError("delta_t must be positive")
        if self.num_steps < 0 or not 0 <= self.step_index <= self.num_steps:
            raise ValueError("step_index must lie in [0, num_steps]")

    def advanced(self) -> "SimulationClock":
        return replace(self, step_index=self.step_index + 1)


@dataclass(frozen=True)
class MarketState:
    price: float
    prev_price: float
    excess_demand: float
    prev_excess_demand: float
    clock: SimulationClock

    @property
    def ed_view(self) -> ExcessDemandView:
        return ExcessDemandView(self.excess_demand, self.prev_excess_demand)


@dataclass
class RunOutput:
    price_series: np.ndarray
    ed_series: np.ndarray
    observables: dict
    wall_time: float
    embedded_config: str
    seed_record: dict = field(default_factory=dict)

    def series(self) -> dict:
        """All recorded series by output name."""
        out = {"price": self.price_series, "excess_demand": self.ed_series}
        out.update(self.observables)
        return out


def step(market: MarketState, populations, ed_calc, price_calc, rng) -> MarketState:
    """Advance the market by one step and return the new state.

    The returned state carries S_{k+1} in ``price`` and, in ``excess_demand``,
    the excess demand ED_k that formed it (``prev_excess_demand`` is ED_{k-1}).
    """
    k = market.clock.step_index
    for pop in populations:
        pop.prepare(market, rng)
    ed = ed_calc.compute(populations, market.price)
    if not math.isfinite(ed):
        raise SimulationError(f"non-finite excess demand ({ed})", k)
    pre = replace(market, excess_demand=ed, prev_excess_demand=market.excess_demand)
    try:
        new_price = price_calc.next_price(pre, populations, ed_calc, rng)
    except (RuntimeError, ArithmeticError) as exc:
        raise SimulationError(str(exc), k) from exc
    if not (math.isfinite(new_price) and new_price > 0):
        raise SimulationError(f"price must stay finite and positive, got {new_price}", k)
    post = MarketState(price=new_price, prev_price=market.price, excess_demand=ed,
                       prev_excess_demand=market.excess_demand, clock=market.clock.advanced())
    for pop in populations:
        try:
            pop.update(post, rng)
        except (ArithmeticError, ValueError) as exc:
            raise SimulationError(str(exc), k) from exc
    return post


@dataclass
class Model:
    populations: list
    ed_calc: object
    price_calc: object
    rng: object
    market: MarketState
    recording: tuple | None = None

    def observable_names(self) -> list:
        names = []
        for pop in self.populations:
            names.extend(pop.observables())
        if self.recording is None:
            return names
        unknown = [r for r in self.recording if r not in names]
        if unknown:
            raise SimulationError(f"unknown observables {unknown}; available: {names}")
        return list(self.recording)

    def _snapshot(self, names, out, k):
        obs = {}
        for pop in self.populations:
            obs.update(pop.observables())
        for name in names:
            out[name][k] = obs[name]

    def run(self, num_steps: int):
        """Returns (prices, eds, observables, wall_time)."""
        fused = _fused_plan(self)
        if fused is not None:
            return _run_fused(self, num_steps, *fused)
        names = self.observable_names()
        prices = np.empty(num_steps + 1)
        eds = np.empty(num_steps + 1)
        obs = {name: np.empty(num_steps + 1) for name in names}
        prices[0] = self.market.price
        self._snapshot(names, obs, 0)
        start = time.perf_counter()
        market = self.market
        for k in range(num_steps):
            market = step(market, self.populations, self.ed_calc, self.price_calc, self.rng)
            prices[k + 1] = market.price
            eds[k] = market.excess_demand
            self._snapshot(names, obs, k + 1)
        wall = time.perf_counter() - start
        eds[num_steps] = self.ed_calc.compute(self.populations, market.price)
        self.market = market
        return prices, eds, obs, wall


# compiled loop for a single Cross population --------------------------------

_DRIFT_CODES = {"none": 0, "F1-ed-derivative": 1, "F2-ed-level": 2}


@njit(cache=True)
def _cross_loop(mt, pos, buf, cur, pooled, num_steps, price0, ed_prev0, dt,
                rule, theta, kappa, drift, diffusion, sigma, c, m, alpha, beta,
                wealth_on, w, r, gamma, prices, eds, pos_mean, switch_frac, w_mean):
    """Returns -1 on success or the failing step index."""
    n = sigma.size
    S = price0
    ed_prev = ed_prev0
    sqdt = math.sqrt(dt)
    for k in range(num_steps):
        total = 0.0
        for i in range(n):
            total += sigma[i]
        ed = total / n
        if rule == 0:
            eta = _rng._std_normal(mt, pos, buf, cur, pooled)
            S_new = S * math.exp((1.0 + theta * abs(ed)) * sqdt * eta + kappa * (ed - ed_prev))
        else:
            eta = 0.0
            g = 0.0
            if diffusion == 1:
                eta = _rng._std_normal(mt, pos, buf, cur, pooled)
                g = S * (1.0 + theta * abs(ed))
            f = 0.0
            if drift == 1:
                f = kappa * S * (ed - ed_prev) / dt
            elif drift == 2:
                f = kappa * S * ed
            S_new = S + dt * f + sqdt * g * eta
        if not (S_new > 0 and S_new < math.inf):
            eds[k] = ed
            return k
        switches = 0
        push = dt * abs(ed)
        for i in range(n):
            if sigma[i] * ed < 0:
                c[i] += push
            a = 1.0 + alpha[i]
            if c[i] > beta[i] or S_new < m[i] / a or S_new > m[i] * a:
                sigma[i] = -sigma[i]
                c[i] = 0.0
                m[i] = S_new
                switches += 1
        if wealth_on:
            factor = 1.0 + dt * ((1.0 - gamma) * r + gamma * (S_new - S) / (dt * S_new))
            for i in range(n):
                w[i] *= factor
        prices[k + 1] = S_new
        eds[k] = ed
        acc = 0.0
        for i in range(n):
            acc += sigma[i]
        pos_mean[k + 1] = acc / n
        switch_frac[k + 1] = switches / n
        if wealth_on:
            acc = 0.0
            for i in range(n):
                acc += w[i]
            w_mean[k + 1] = acc / n
        S = S_new
        ed_prev = ed
    return -1


def _fused_plan(model: Model):
    pops = model.populations
    if len(pops) != 1 or type(pops[0]) is not CrossPopulation:
        return None
    if type(model.ed_calc) is not MeanExcessDemand or not isinstance(model.rng, RandomStream):
        return None
    pc = model.price_calc
    if type(pc) is CrossExponentialPrice:
        return (0, pc.theta, pc.kappa, 0, 0)
    if type(pc) is EulerMaruyamaPrice:
        return (1, pc.theta, pc.kappa, _DRIFT_CODES[pc.drift_name],
                1 if pc.diffusion_name != "none" else 0)
    return None


def _run_fused(model: Model, num_steps, rule, theta, kappa, drift, diffusion):
    pop = model.populations[0]
    names = model.observable_names()
    prices = np.empty(num_steps + 1)
    eds = np.empty(num_steps + 1)
    series = {name: np.empty(num_steps + 1) for name in pop.observables()}
    prices[0] = model.market.price
    for name, value in pop.observables().items():
        series[name][0] = value
    wealth_on = pop.w is not None
    w = pop.w if wealth_on else np.empty(0)
    w_mean = series.get(f"{pop.name}_wealth_mean", np.empty(num_steps + 1))
    p = pop.params
    mt, pos, buf, cur, pooled = model.rng._state
    start = time.perf_counter()
    bad = _cross_loop(mt, pos, buf, cur, pooled, num_steps, model.market.price,
                      model.market.excess_demand, model.market.clock.delta_t, rule,
                      float(theta), float(kappa), drift, diffusion, pop.sigma, pop.c, pop.m,
                      pop.alpha, pop.beta, wealth_on, w, float(p.r), float(p.gamma), prices,
                      eds, series[f"{pop.name}_position_mean"],
                      series[f"{pop.name}_switch_fraction"], w_mean)
    wall = time.perf_counter() - start
    if bad >= 0:
        raise SimulationError("price must stay finite and positive", int(bad))
    final = MarketState(price=float(prices[num_steps]),
                        prev_price=float(prices[num_steps - 1]) if num_steps else model.market.prev_price,
                        excess_demand=float(eds[num_steps - 1]) if num_steps else model.market.excess_demand,
                        prev_excess_demand=float(eds[num_steps - 2]) if num_steps > 1 else model.market.excess_demand,
                        clock=replace(model.market.clock,
                                      step_index=model.market.clock.step_index + num_steps))
    model.market = final
    if num_steps:
        pop.switches = int(round(series[f"{pop.name}_switch_fraction"][num_steps] * pop.size))
    eds[num_steps] = model.ed_calc.compute(model.populations, final.price)
    return prices, eds, {name: series[name] for name in names}, wall


# assembly -------------------------------------------------------------------


def build_model(config: SimulationConfig, seed: int) -> Model:
    rng = RandomStream(config.generator_spec(seed))
    run = config.run
    populations = []
    for block in config.agents:
        if block.agent_class == "AgentCross":
            pop = init_cross_population(block.count, block.params, rng, run.start_price,
                                        run.delta_t, name=block.name)
        elif block.agent_class == "AgentLLS":
            pop = init_lls_population(block.params, rng, run.delta_t, run.start_price,
                                      name=block.name)
        elif block.agent_class == "AgentHarras":
            pop = init_harras_population(block.count, block.params, rng, name=block.name)
        else:  # unreachable after parsing
            raise SimulationError(f"unknown agent class {block.agent_class}")
        populations.append(pop)
    if config.excess_demand.calculator_class == "ExcessDemandCalculatorHarras":
        lam = config.excess_demand.market_depth
        if lam is None:
            harras = [p for p in populations if isinstance(p, HarrasPopulation)]
            lam = harras[0].params.lam if harras else 0.25
        ed_calc = VolumeExcessDemand(lam)
    else:
        ed_calc = MeanExcessDemand()
    price_calc = make_price_calculator(config.price)
    ed0 = ed_calc.compute(populations, run.start_price)
    clock = SimulationClock(0, run.delta_t, run.num_steps)
    market = MarketState(run.start_price, run.start_price, ed0, ed0, clock)
    return Model(populations, ed_calc, price_calc, rng, market, config.recording)


def run_simulation(config: SimulationConfig, run_index: int = 0) -> RunOutput:
    seed = derive_run_seed(config.run.seed, run_index)
    model = build_model(config, seed)
    prices, eds, obs, wall = model.run(config.run.num_steps)
    return RunOutput(prices, eds, obs, wall, config.source_text,
                     {"master_seed": config.run.seed, "run_index": run_index,
                      "run_seed": seed})


def measure_runtime(config: SimulationConfig, run_index: int = 0) -> float:
    """Wall time of the step loop only (initialization and IO excluded)."""
    return run_simulation(config, run_index).wall_time
