"""Log-utility investors with a return memory and market clearing.

Each agent splits wealth w into a fraction gamma held in stock and 1-gamma in
a bond paying r.  Every step the agents of one memory group choose the
fraction gamma* in [0.01, 0.99] maximizing the mean log wealth over their
last m observed returns, blur it with truncated-normal noise, and the price
is the one at which the shares demanded add up to the fixed supply.

Step protocol (per engine step k, prices S_k -> S_{k+1}):

* ``prepare``: draw the next dividend, compute gamma* per group from the
  committed history, draw the noisy fractions gamma_new.  Nothing committed
  changes.
* ``bisection_update(S)``: hypothetical return x(S), hypothetical wealth
  w^h = w (1 + dt ((1 - gamma_old) r + gamma_old x(S))), demand
  gamma_new w^h / S.
* ``update``: commit wealth, fractions and shares at the cleared price and
  append the realized return to the history.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .market import BisectionError
from .population import BISECTION, Population

GAMMA_MIN = 0.01
GAMMA_MAX = 0.99
SCALING_MODES = ("fixed-memory", "scaled-memory")
DENOMINATORS = ("previous", "current")
NOISE_MODES = ("admissible", "clamped")


@dataclass(frozen=True)
class LLSGroup:
    count: int
    memory: int

    def __post_init__(self):
        if self.count < 1 or self.memory < 1:
            raise ValueError("group count and memory must be positive")


@dataclass(frozen=True)
class LLSParams:
    groups: tuple = (LLSGroup(100, 15),)
    sigma_gamma: float = 0.0
    r: float = 0.04
    z1: float = 0.05
    z2: float = 0.05
    mu_h: float = 0.0415
    sigma_h: float = 0.003
    scaling_mode: str = "fixed-memory"
    return_denominator: str = "previous"
    noise_mode: str = "admissible"
    noise_width: float = 2.0  # clamped mode: truncation in units of sigma_gamma
    w0: float = 1000.0
    n0: float = 100.0
    gamma0: float = 0.4
    d0: float = 0.2

    def __post_init__(self):
        if not self.groups:
            raise ValueError("at least one agent group is required")
        if self.sigma_gamma < 0 or self.sigma_h < 0:
            raise ValueError("standard deviations must be non-negative")
        if self.z1 > self.z2:
            raise ValueError("need z1 <= z2")
        if self.scaling_mode not in SCALING_MODES:
            raise ValueError(f"scaling_mode must be one of {SCALING_MODES}")
        if self.return_denominator not in DENOMINATORS:
            raise ValueError(f"return_denominator must be one of {DENOMINATORS}")
        if not GAMMA_MIN <= self.gamma0 <= GAMMA_MAX:
            raise ValueError("initial gamma outside [0.01, 0.99]")
        if self.w0 <= 0 or self.n0 < 0 or self.d0 <= 0:
            raise ValueError("initial wealth and dividend must be positive")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
        if self.noise_width <= 0:
            raise ValueError("noise_width must be positive")

    @property
    def size(self) -> int:
        return sum(g.count for g in self.groups)


def effective_memory(m: int, dt: float, mode: str) -> int:
    if mode == "scaled-memory":
        return max(1, int(round(m / dt)))
    return int(m)


# scalar model functions ----------------------------------------------------


def dividend_step(D: float, z1: float, z2: float, dt: float, rng) -> float:
    if 1.0 + dt * min(z1, z2) <= 0:
        raise ValueError("dividend growth bounds allow a non-positive dividend")
    z = z1 if z1 == z2 else rng.uniform(z1, z2)
    return (1.0 + dt * z) * D


def stock_return_x(S_now: float, S_prev: float, D: float, dt: float,
                   denominator: str = "current") -> float:
    base = S_now if denominator == "current" else S_prev
    return ((S_now - S_prev) / dt + D) / base


def expected_log_utility(gamma: float, window, r: float, dt: float, w: float) -> float:
    x = np.asarray(window, dtype=float)
    arg = (1.0 - gamma) * w * (1.0 + r * dt) + gamma * w * (1.0 + x * dt)
    if np.any(arg <= 0):
        raise ValueError("log utility of non-positive wealth")
    return float(np.mean(np.log(arg)))


@njit(cache=True)
def _foc(gamma, window, r, dt):
    total = 0.0
    base = 1.0 + dt * r
    for j in range(window.size):
        y = dt * (window[j] - r)
        total += y / (y * gamma + base)
    return total / window.size


@njit(cache=True)
def _optimal(window, r, dt, tol):
    f_lo = _foc(GAMMA_MIN, window, r, dt)
    if f_lo < 0:
        return GAMMA_MIN
    f_hi = _foc(GAMMA_MAX, window, r, dt)
    if f_hi > 0:
        return GAMMA_MAX
    if f_lo == 0:
        return GAMMA_MIN
    if f_hi == 0:
        return GAMMA_MAX
    lo, hi = GAMMA_MIN, GAMMA_MAX
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _foc(mid, window, r, dt) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def first_order_condition(gamma: float, window, r: float, dt: float) -> float:
    window = np.asarray(window, dtype=float)
    denom = dt * (window - r) * gamma + 1.0 + dt * r
    if np.any(denom == 0):
        raise ZeroDivisionError("vanishing denominator in the first-order condition")
    return float(_foc(float(gamma), window, float(r), float(dt)))


def optimal_investment(window, r: float, dt: float, tol: float = 1e-8) -> float:
    window = np.asarray(window, dtype=float)
    if window.size == 0:
        raise ValueError("empty return window")
    return float(_optimal(window, float(r), float(dt), tol))


def perturb_investment(gamma_star, sigma_gamma: float, rng, width: float = 2.0,
                       mode: str = "admissible"):
    """gamma* + eps with truncated-normal eps of standard deviation sigma_gamma.

    ``admissible``: eps is truncated so that gamma* + eps stays in [0.01, 0.99].
    ``clamped``: eps is truncated to +-width*sigma_gamma and the sum is then
    clamped to [0.01, 0.99].  Accepts a scalar or an array of gamma*; one
    accepted normal is consumed per agent, in agent order.
    """
    if mode not in NOISE_MODES:
        raise ValueError(f"noise mode must be one of {NOISE_MODES}")
    g = np.asarray(gamma_star, dtype=float)
    if sigma_gamma > 0 and mode == "admissible":
        flat = g.ravel()
        out = np.empty_like(flat)
        # runs of equal gamma* are drawn as one block, preserving agent order
        cuts = np.concatenate(([0], np.flatnonzero(flat[1:] != flat[:-1]) + 1, [flat.size]))
        for start, stop in zip(cuts[:-1], cuts[1:]):
            out[start:stop] = rng.truncated_normal_array(flat[start], sigma_gamma, GAMMA_MIN,
                                                         GAMMA_MAX, stop - start)
        g = out.reshape(g.shape)
    elif sigma_gamma > 0:
        bound = width * sigma_gamma
        eps = rng.truncated_normal_array(0.0, sigma_gamma, -bound, bound, g.size)
        g = g + eps.reshape(g.shape)
    g = np.clip(g, GAMMA_MIN, GAMMA_MAX)
    return float(g) if g.ndim == 0 else g


def lls_wealth_update(w: float, gamma: float, r: float, x: float, dt: float) -> float:
    w_new = w * (1.0 + dt * ((1.0 - gamma) * r + gamma * x))
    if not w_new > 0:
        raise FloatingPointError(f"wealth became non-positive ({w_new})")
    return w_new


@njit(cache=True)
def _demand_kernel(w, g_old, g_new, x, r, dt, candidate, w_h):
    total = 0.0
    for i in range(w.size):
        wh = w[i] * (1.0 + dt * ((1.0 - g_old[i]) * r + g_old[i] * x))
        w_h[i] = wh
        total += g_new[i] * wh / candidate
    return total


@njit(cache=True)
def _clear_mismatch(c, w, g_old, g_new, r, dt, S_prev, D, current_base, n_total, w_h):
    base = c if current_base else S_prev
    x = ((c - S_prev) / dt + D) / base
    return (_demand_kernel(w, g_old, g_new, x, r, dt, c, w_h) - n_total) / w.size


@njit(cache=True)
def _clear_kernel(w, g_old, g_new, r, dt, S_prev, D, current_base, n_total, w_h,
                  lower, upper, epsilon, max_iter, max_expansions):
    """Compiled twin of bracket expansion plus bisection for one LLS population.

    Returns (price, status, f_lower, f_upper); status 0 is success, 1 a
    non-finite end value, 2 no sign change, 3 a non-finite midpoint and 4 an
    exhausted iteration budget.
    """
    for _ in range(max_expansions):
        f_lo = _clear_mismatch(lower, w, g_old, g_new, r, dt, S_prev, D, current_base, n_total, w_h)
        f_hi = _clear_mismatch(upper, w, g_old, g_new, r, dt, S_prev, D, current_base, n_total, w_h)
        if not (math.isfinite(f_lo) and math.isfinite(f_hi)) or (f_lo > 0) != (f_hi > 0):
            break
        lower, upper = lower / 10.0, upper * 10.0
    f_lo = _clear_mismatch(lower, w, g_old, g_new, r, dt, S_prev, D, current_base, n_total, w_h)
    if abs(f_lo) < epsilon:
        return lower, 0, f_lo, f_lo
    f_hi = _clear_mismatch(upper, w, g_old, g_new, r, dt, S_prev, D, current_base, n_total, w_h)
    if abs(f_hi) < epsilon:
        return upper, 0, f_lo, f_hi
    if not (math.isfinite(f_lo) and math.isfinite(f_hi)):
        return lower, 1, f_lo, f_hi
    if (f_lo > 0) == (f_hi > 0):
        return lower, 2, f_lo, f_hi
    lo, hi = lower, upper
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = _clear_mismatch(mid, w, g_old, g_new, r, dt, S_prev, D, current_base, n_total, w_h)
        if not math.isfinite(f_mid):
            return mid, 3, f_lo, f_hi
        if abs(f_mid) < epsilon or hi - lo <= 1e-12 * hi:
            return mid, 0, f_lo, f_hi
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return lo, 4, f_lo, f_hi


def lls_clearance_mismatch(w, gamma_old, gamma_new, shares_total: float, candidate: float,
                           S_prev: float, D: float, r: float, dt: float,
                           denominator: str = "current") -> float:
    """Shares demanded at ``candidate`` minus the fixed supply."""
    if not candidate > 0:
        raise ValueError("candidate price must be positive")
    w = np.asarray(w, dtype=float)
    x = stock_return_x(candidate, S_prev, D, dt, denominator)
    scratch = np.empty_like(w)
    demand = _demand_kernel(w, np.asarray(gamma_old, dtype=float),
                            np.asarray(gamma_new, dtype=float), x, r, dt, candidate, scratch)
    return demand - shares_total


def decision_fraction_boundary(gamma_star) -> float:
    g = np.asarray(gamma_star, dtype=float).ravel()
    g = g[np.isfinite(g)]
    if g.size == 0:
        return float("nan")
    return float(np.mean((g == GAMMA_MIN) | (g == GAMMA_MAX)))


_CLEAR_ERRORS = {
    1: "non-finite mismatch on the clearing bracket (f(lower)={f_lo:.6g}, f(upper)={f_hi:.6g})",
    2: "no sign change on the clearing bracket: f(lower)={f_lo:.6g}, f(upper)={f_hi:.6g}",
    3: "non-finite mismatch at candidate {price}",
    4: "bisection did not converge within {max_iter} iterations",
}


# history -------------------------------------------------------------------


class ReturnHistory:
    """Append-only record of per-step returns; the last entry is the most recent."""

    def __init__(self, initial, capacity: int = 1024):
        initial = np.asarray(initial, dtype=float)
        self._data = np.empty(max(capacity, 2 * initial.size, 1))
        self._data[: initial.size] = initial
        self._n = initial.size

    def __len__(self):
        return self._n

    def append(self, x: float) -> None:
        if self._n == self._data.size:
            grown = np.empty(2 * self._data.size)
            grown[: self._n] = self._data[: self._n]
            self._data = grown
        self._data[self._n] = x
        self._n += 1

    def window(self, m: int) -> np.ndarray:
        if m > self._n:
            raise ValueError(f"history holds {self._n} returns, {m} requested")
        return self._data[self._n - m: self._n]

    def values(self) -> np.ndarray:
        return self._data[: self._n].copy()


# population ----------------------------------------------------------------


class LLSPopulation(Population):
    kind = "AgentLLS"
    capabilities = frozenset({BISECTION})

    def __init__(self, name, params: LLSParams, dt: float, history: ReturnHistory,
                 group_id, memory, w, n, gamma, dividend: float):
        super().__init__(name)
        self.params = params
        self.dt = dt
        self.history = history
        self.group_id = np.asarray(group_id, dtype=np.int64)
        self.memory = np.asarray(memory, dtype=np.int64)  # effective steps per group
        self.w = np.asarray(w, dtype=float)
        self.n = np.asarray(n, dtype=float)
        self.gamma = np.asarray(gamma, dtype=float)
        self.dividend = float(dividend)
        self.shares_total = float(self.n.sum())
        self._gamma_star_group = np.full(self.memory.size, np.nan)
        self._gamma_star = np.full(self.size, np.nan)
        self._gamma_new = self.gamma.copy()
        self._w_h = self.w.copy()
        self._dividend_next = self.dividend
        self._prepared = False

    @property
    def size(self):
        return self.w.size

    @property
    def gamma_star(self) -> np.ndarray:
        """Pre-noise optima of the most recent decision round."""
        return self._gamma_star

    def cash(self):
        return (1.0 - self.gamma) * self.w

    def stock(self):
        return self.n

    def decision(self):
        return self.gamma

    def _return(self, candidate, S_prev):
        return stock_return_x(candidate, S_prev, self._dividend_next, self.dt,
                              self.params.return_denominator)

    def prepare(self, market, rng):
        p = self.params
        self._dividend_next = dividend_step(self.dividend, p.z1, p.z2, self.dt, rng)
        for g, m in enumerate(self.memory):
            self._gamma_star_group[g] = _optimal(self.history.window(int(m)), p.r,
                                                 self.dt, 1e-8)
        self._gamma_star = self._gamma_star_group[self.group_id]
        self._gamma_new = perturb_investment(self._gamma_star, p.sigma_gamma, rng,
                                             p.noise_width, p.noise_mode)
        self._prepared = True

    def excess_demand_sum(self, price):
        return float(np.sum(self.gamma * self.w / price - self.n))

    def bisection_update(self, candidate, market):
        if not self._prepared:
            raise RuntimeError("bisection_update called before prepare")
        x = self._return(candidate, market.price)
        demand = _demand_kernel(self.w, self.gamma, self._gamma_new, x, self.params.r,
                                self.dt, candidate, self._w_h)
        return demand - self.shares_total

    def clear_compiled(self, market, lower: float, upper: float, settings) -> float:
        """Clearing price via the compiled solver; same result as the generic route."""
        if not self._prepared:
            raise RuntimeError("clear_compiled called before prepare")
        p = self.params
        args = (self.w, self.gamma, self._gamma_new, p.r, self.dt, market.price,
                self._dividend_next, p.return_denominator == "current", self.shares_total,
                self._w_h)
        price, status, f_lo, f_hi = _clear_kernel(*args, lower, upper, settings.epsilon,
                                                  settings.max_iterations,
                                                  settings.max_expansions)
        if status:
            raise BisectionError(_CLEAR_ERRORS[status].format(
                lower=lower, upper=upper, f_lo=f_lo, f_hi=f_hi, price=price,
                max_iter=settings.max_iterations))
        _clear_mismatch(price, *args)  # leave the scratch wealth at the accepted price
        return float(price)

    def update(self, market, rng):
        if not self._prepared:
            self.prepare(market, rng)
        S, S_prev = market.price, market.prev_price
        x = self._return(S, S_prev)
        r, dt = self.params.r, self.dt
        w_new = self.w * (1.0 + dt * ((1.0 - self.gamma) * r + self.gamma * x))
        if not np.all(w_new > 0):
            raise FloatingPointError("LLS wealth became non-positive")
        self.w = w_new
        self.gamma = self._gamma_new
        self.n = self.gamma * self.w / S
        self.history.append(x)
        self.dividend = self._dividend_next
        self._prepared = False

    def group_wealth(self) -> np.ndarray:
        return np.bincount(self.group_id, weights=self.w, minlength=self.memory.size)

    def observables(self):
        obs = {}
        for g, total in enumerate(self.group_wealth()):
            obs[f"{self.name}_wealth_group_{g}"] = float(total)
        for g, value in enumerate(self._gamma_star_group):
            obs[f"{self.name}_gamma_star_group_{g}"] = float(value)
        obs[f"{self.name}_boundary_fraction"] = decision_fraction_boundary(self._gamma_star)
        obs[f"{self.name}_gamma_mean"] = float(self.gamma.mean())
        obs[f"{self.name}_shares_total"] = float(self.n.sum())
        obs[f"{self.name}_dividend"] = self.dividend
        return obs


def init_lls_population(params: LLSParams, rng, dt: float, start_price: float,
                        name: str = "lls") -> LLSPopulation:
    memory = np.array([effective_memory(g.memory, dt, params.scaling_mode)
                       for g in params.groups], dtype=np.int64)
    depth = int(memory.max())
    history = ReturnHistory(rng.normal_array(params.mu_h, params.sigma_h, depth),
                            capacity=max(1024, 2 * depth))
    group_id = np.repeat(np.arange(len(params.groups)), [g.count for g in params.groups])
    n = params.size
    return LLSPopulation(name, params, dt, history, group_id, memory,
                         w=np.full(n, params.w0), n=np.full(n, params.n0),
                         gamma=np.full(n, params.gamma0), dividend=params.d0)
