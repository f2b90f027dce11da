"""Excess-demand aggregation and price formation.

Two families of price rules are supported:

* explicit updates ``S_{k+1} = M(S_k, ED, eta)`` (Cross exponential rule,
  generic Euler-Maruyama rule, Harras log rule), and
* implicit clearing, where ``S_{k+1}`` solves ``ED(S) = 0`` by bisection and
  every candidate price is pushed through the agents' bisection callback.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .population import BISECTION, TRADING_VOLUME

PRICE_VARIANTS = ("cross-exponential", "general-sde", "harras-log", "bisection-rational")
DRIFTS = ("F1-ed-derivative", "F2-ed-level", "none")
DIFFUSIONS = ("cross-heteroskedastic", "none")


class PriceError(RuntimeError):
    """Raised when a price rule produces a non-finite or non-positive price."""


class BisectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExcessDemandView:
    current: float
    previous: float

    @property
    def delta(self) -> float:
        return self.current - self.previous


@dataclass(frozen=True)
class BisectionSettings:
    epsilon: float = 1e-8
    max_iterations: int = 200
    lower_bound: float = 0.01
    upper_bound: float = 200.0
    relative_bounds: bool = False  # bracket is [lower*S_k, upper*S_k]
    max_expansions: int = 0  # times the bracket may be widened tenfold per side
    scan_points: int = 0  # interior grid searched for a sign change when the ends agree

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("bisection epsilon must be positive")
        if self.max_iterations < 1:
            raise ValueError("bisection max_iterations must be positive")
        if not 0 < self.lower_bound < self.upper_bound:
            raise ValueError("bisection bounds must satisfy 0 < lower < upper")
        if self.max_expansions < 0:
            raise ValueError("bisection max_expansions must be non-negative")
        if self.scan_points < 0:
            raise ValueError("bisection scan_points must be non-negative")

    def bracket(self, price: float) -> tuple[float, float]:
        if self.relative_bounds:
            return self.lower_bound * price, self.upper_bound * price
        return self.lower_bound, self.upper_bound


@dataclass(frozen=True)
class PriceRuleSpec:
    variant: str
    theta: float = 0.0
    kappa: float = 0.2
    lam: float = 0.25
    drift: str = "F1-ed-derivative"
    diffusion: str = "cross-heteroskedastic"
    bisection: BisectionSettings = BisectionSettings()

    def __post_init__(self):
        if self.variant not in PRICE_VARIANTS:
            raise ValueError(f"unknown price rule {self.variant!r}")
        if self.theta < 0:
            raise ValueError("theta must be non-negative")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.drift not in DRIFTS:
            raise ValueError(f"unknown drift {self.drift!r}")
        if self.diffusion not in DIFFUSIONS:
            raise ValueError(f"unknown diffusion {self.diffusion!r}")


# pure price formulas -------------------------------------------------------


def aggregate_excess_demand(ed_terms) -> float:
    ed_terms = np.asarray(ed_terms, dtype=float)
    if ed_terms.size == 0:
        raise ValueError("excess demand of an empty population")
    return float(ed_terms.mean())


def harras_excess_demand(sigma, volume, lam: float) -> float:
    sigma = np.asarray(sigma, dtype=float)
    volume = np.asarray(volume, dtype=float)
    if sigma.size == 0:
        raise ValueError("excess demand of an empty population")
    if not lam > 0:
        raise ValueError("market depth lambda must be positive")
    return float(np.dot(sigma, volume) / (lam * sigma.size))


def _exp(x: float) -> float:
    return math.exp(x) if x < 709.0 else math.inf


def _finite_positive(value: float, what: str) -> float:
    if not math.isfinite(value):
        raise PriceError(f"{what} produced a non-finite price ({value})")
    if value <= 0:
        raise PriceError(f"{what} produced a non-positive price ({value})")
    return value


def price_cross_exponential(S: float, ed: ExcessDemandView, theta: float,
                            kappa: float, dt: float, eta: float) -> float:
    exponent = (1.0 + theta * abs(ed.current)) * math.sqrt(dt) * eta + kappa * ed.delta
    return _finite_positive(S * _exp(exponent), "cross exponential rule")


def drift_ed_derivative(S: float, ed: ExcessDemandView, dt: float, kappa: float = 1.0) -> float:
    """kappa * S * dED/dt, with the derivative as a backward difference."""
    return kappa * S * ed.delta / dt


def drift_ed_level(S: float, ed: ExcessDemandView, dt: float, kappa: float = 1.0) -> float:
    return kappa * S * ed.current


def evaluate_diffusion_cross(S: float, ed: float, theta: float) -> float:
    return S * (1.0 + theta * abs(ed))


def price_general_sde(S: float, ed: ExcessDemandView, drift: Callable | None,
                      diffusion: Callable | None, dt: float, eta: float) -> float:
    """Euler-Maruyama step ``S + dt F(S, ED) + sqrt(dt) G(S, ED) eta``.

    ``drift(S, ed, dt)`` and ``diffusion(S, ed)`` may be None for zero terms.
    """
    f = drift(S, ed, dt) if drift is not None else 0.0
    g = diffusion(S, ed) if diffusion is not None else 0.0
    return _finite_positive(S + dt * f + math.sqrt(dt) * g * eta, "Euler-Maruyama rule")


def price_harras_log(S: float, ed: float) -> float:
    return _finite_positive(S * _exp(ed), "log-price rule")


def expand_bracket(mismatch: Callable[[float], float], lower: float, upper: float,
                   max_expansions: int, factor: float = 10.0) -> tuple[float, float]:
    """Widen ``[lower, upper]`` geometrically until the mismatch changes sign.

    Returns the first bracket with a sign change, or the widest one tried.
    """
    for _ in range(max_expansions):
        f_lo, f_hi = mismatch(lower), mismatch(upper)
        if not (math.isfinite(f_lo) and math.isfinite(f_hi)) or (f_lo > 0) != (f_hi > 0):
            break
        lower, upper = lower / factor, upper * factor
    return lower, upper


def scan_bracket(mismatch: Callable[[float], float], lower: float, upper: float,
                 points: int) -> tuple[float, float]:
    """Narrow ``[lower, upper]`` to the highest sign change on a geometric grid.

    Used when the mismatch is not monotone and both ends share a sign; the
    root closest to the upper end is the one where demand falls with price.
    """
    f_hi = mismatch(upper)
    if (mismatch(lower) > 0) != (f_hi > 0):
        return lower, upper
    grid = np.geomspace(lower, upper, points + 2)[1:-1]
    for s in grid[::-1]:
        if (mismatch(s) > 0) != (f_hi > 0):
            return float(s), upper
    return lower, upper


def solve_rational_price(mismatch: Callable[[float], float], lower: float, upper: float,
                         epsilon: float, max_iter: int) -> float:
    """Bisection for ``mismatch(S) = 0`` on ``[lower, upper]``.

    Stops when ``|mismatch| < epsilon`` or when the bracket is narrower than
    ``1e-12`` relative to its upper end.
    """
    if not 0 <= lower < upper:
        raise BisectionError(f"invalid bracket [{lower}, {upper}]")
    f_lo = mismatch(lower)
    if abs(f_lo) < epsilon:
        return lower
    f_hi = mismatch(upper)
    if abs(f_hi) < epsilon:
        return upper
    if not (math.isfinite(f_lo) and math.isfinite(f_hi)):
        raise BisectionError(f"non-finite mismatch on bracket [{lower}, {upper}]")
    if (f_lo > 0) == (f_hi > 0):
        raise BisectionError(
            f"no sign change on bracket [{lower}, {upper}]: "
            f"f(lower)={f_lo:.6g}, f(upper)={f_hi:.6g}")
    lo, hi = lower, upper
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = mismatch(mid)
        if not math.isfinite(f_mid):
            raise BisectionError(f"non-finite mismatch at candidate {mid}")
        if abs(f_mid) < epsilon or hi - lo <= 1e-12 * hi:
            return mid
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    raise BisectionError(f"bisection did not converge within {max_iter} iterations")


# excess-demand calculators -------------------------------------------------


class MeanExcessDemand:
    """ED = (1/N) sum of all agents' microscopic excess demands."""

    name = "ExcessDemandCalculatorMean"

    def compute(self, populations, price: float) -> float:
        total = sum(p.size for p in populations)
        if total == 0:
            raise ValueError("excess demand of an empty market")
        return sum(p.excess_demand_sum(price) for p in populations) / total

    def candidate(self, populations, candidate: float, market) -> float:
        total = sum(p.size for p in populations)
        return sum(p.bisection_update(candidate, market) for p in populations) / total


class VolumeExcessDemand:
    """ED = (1/(lambda N)) sum sigma_i v_i over trading-volume agents."""

    name = "ExcessDemandCalculatorHarras"

    def __init__(self, lam: float = 0.25):
        if not lam > 0:
            raise ValueError("market depth lambda must be positive")
        self.lam = lam

    def compute(self, populations, price: float) -> float:
        total = sum(p.size for p in populations)
        if total == 0:
            raise ValueError("excess demand of an empty market")
        return sum(p.signed_volume_sum() for p in populations) / (self.lam * total)

    def candidate(self, populations, candidate: float, market) -> float:
        raise BisectionError("volume-based excess demand has no candidate-price form")


ED_REQUIREMENTS = {MeanExcessDemand.name: frozenset(),
                   VolumeExcessDemand.name: frozenset({TRADING_VOLUME})}


# price calculators ---------------------------------------------------------


class CrossExponentialPrice:
    name = "PriceCalculatorCross"
    requires = frozenset()

    def __init__(self, theta: float, kappa: float):
        self.theta, self.kappa = theta, kappa

    def next_price(self, market, populations, ed_calc, rng) -> float:
        eta = rng.normal(0.0, 1.0)
        return price_cross_exponential(market.price, market.ed_view, self.theta,
                                       self.kappa, market.clock.delta_t, eta)


class EulerMaruyamaPrice:
    name = "PriceCalculatorGeneral"
    requires = frozenset()

    def __init__(self, theta: float = 0.0, drift: str = "F1-ed-derivative",
                 diffusion: str = "cross-heteroskedastic", kappa: float = 1.0):
        self.theta, self.kappa = theta, kappa
        self.drift_name, self.diffusion_name = drift, diffusion
        base = {"F1-ed-derivative": drift_ed_derivative,
                "F2-ed-level": drift_ed_level, "none": None}[drift]
        self._drift = None if base is None else (lambda S, ed, dt: base(S, ed, dt, kappa))
        if diffusion == "none":
            self._diffusion = None
        else:
            self._diffusion = lambda S, ed: evaluate_diffusion_cross(S, ed.current, theta)

    def next_price(self, market, populations, ed_calc, rng) -> float:
        # without a diffusion term the step is deterministic and draws nothing
        eta = rng.normal(0.0, 1.0) if self._diffusion is not None else 0.0
        return price_general_sde(market.price, market.ed_view, self._drift,
                                 self._diffusion, market.clock.delta_t, eta)


class LogPrice:
    name = "PriceCalculatorHarras"
    requires = frozenset()

    def next_price(self, market, populations, ed_calc, rng) -> float:
        return price_harras_log(market.price, market.excess_demand)


class BisectionPrice:
    name = "PriceCalculatorBisection"
    requires = frozenset({BISECTION})

    def __init__(self, settings: BisectionSettings, compiled: bool = True):
        self.settings = settings
        self.compiled = compiled  # allow a population's compiled solver when it has one

    def next_price(self, market, populations, ed_calc, rng) -> float:
        lo, hi = self.settings.bracket(market.price)
        if (self.compiled and len(populations) == 1 and type(ed_calc) is MeanExcessDemand
                and not self.settings.scan_points
                and hasattr(populations[0], "clear_compiled")):
            return populations[0].clear_compiled(market, lo, hi, self.settings)

        def mismatch(candidate):
            return ed_calc.candidate(populations, candidate, market)

        if self.settings.max_expansions:
            lo, hi = expand_bracket(mismatch, lo, hi, self.settings.max_expansions)
        if self.settings.scan_points:
            lo, hi = scan_bracket(mismatch, lo, hi, self.settings.scan_points)

        price = solve_rational_price(mismatch, lo, hi, self.settings.epsilon,
                                     self.settings.max_iterations)
        # leave the agents' scratch state at the accepted price
        mismatch(price)
        return price


def make_price_calculator(spec: PriceRuleSpec):
    if spec.variant == "cross-exponential":
        return CrossExponentialPrice(spec.theta, spec.kappa)
    if spec.variant == "general-sde":
        return EulerMaruyamaPrice(spec.theta, spec.drift, spec.diffusion, spec.kappa)
    if spec.variant == "harras-log":
        return LogPrice()
    return BisectionPrice(spec.bisection)
