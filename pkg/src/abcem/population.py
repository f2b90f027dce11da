"""Base class shared by all agent populations.

A population stores its agents as parallel numpy arrays (one entry per agent)
so that the per-step update can run in a compiled kernel.  The engine drives
every population through the same four hooks, in this order per step:

``prepare`` -> (excess demand) -> (price, possibly ``bisection_update``) -> ``update``
"""
from __future__ import annotations

import numpy as np

BISECTION = "bisection"
TRADING_VOLUME = "trading-volume"


class Population:
    kind = "abstract"
    capabilities: frozenset = frozenset()

    def __init__(self, name: str):
        self.name = name

    @property
    def size(self) -> int:
        raise NotImplementedError

    # Every population carries the four generic member variables; subclasses
    # map them onto their own state.
    def cash(self) -> np.ndarray:
        raise NotImplementedError

    def stock(self) -> np.ndarray:
        raise NotImplementedError

    def decision(self) -> np.ndarray:
        raise NotImplementedError

    def trading_volume(self) -> np.ndarray:
        return np.zeros(self.size)

    def prepare(self, market, rng) -> None:
        """Draw per-step randomness into scratch space; committed state is untouched."""

    def excess_demand_sum(self, price: float) -> float:
        """Sum of the microscopic excess demands at the committed state."""
        raise NotImplementedError

    def signed_volume_sum(self) -> float:
        raise NotImplementedError(f"{self.kind} agents carry no trading volume")

    def bisection_update(self, candidate: float, market) -> float:
        """Re-evaluate hypothetical quantities at a candidate price.

        Returns the excess-demand sum at ``candidate``.  Only populations with
        the ``bisection`` capability implement this.
        """
        raise NotImplementedError(f"{self.kind} agents cannot take part in a rational market")

    def update(self, market, rng) -> None:
        raise NotImplementedError

    def observables(self) -> dict[str, float]:
        return {}

    def observable_names(self) -> list[str]:
        return list(self.observables())
