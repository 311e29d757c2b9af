"""Exogenous market environment: geometric price steps and regime schedules.

The collateral price follows a discrete geometric random walk

    p_t = p_{t-1} * exp(mu + sigma * z_t),    z_t ~ N(0, 1) i.i.d.,

with one unit of blocktime per slot.  All behavioural constants (external
rates, elasticities, borrower mix, agent noise) are bundled into a
``MarketRegime`` that stays constant for ``duration`` slots; a
``RegimeSchedule`` concatenates regimes into a piecewise-constant environment.

Randomness is organised as independent named streams spawned from one master
seed, so that switching a single mechanism on or off (say, the adversary)
leaves every other stream's draws untouched.  Paired-run comparisons rely on
this coupling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .riskmath import LogNormalStep

__all__ = [
    "MarketRegime",
    "RegimeSchedule",
    "PricePath",
    "RngStreams",
    "make_streams",
    "step_price",
    "regime_at",
]


@dataclass(frozen=True)
class MarketRegime:
    """Behavioural constants held fixed for ``duration`` consecutive slots."""

    step: LogNormalStep
    r_ext_lend: float
    r_ext_borrow: float
    eta_lend: float
    eta_borrow: float
    alpha: float
    zeta: float
    duration: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0,1], got {self.alpha}")
        if self.eta_lend < 0.0 or self.eta_borrow < 0.0:
            raise ValueError("elasticities must be >= 0")
        if self.zeta < 0.0:
            raise ValueError("zeta must be >= 0")
        if self.duration < 1:
            raise ValueError(f"duration must be >= 1, got {self.duration}")


@dataclass(frozen=True)
class RegimeSchedule:
    """Ordered, gapless sequence of market regimes."""

    regimes: tuple[MarketRegime, ...]

    def __post_init__(self) -> None:
        if not self.regimes:
            raise ValueError("schedule needs at least one regime")
        object.__setattr__(self, "regimes", tuple(self.regimes))

    @property
    def total_duration(self) -> int:
        return sum(r.duration for r in self.regimes)


@dataclass
class PricePath:
    """Realized positive price sequence; ``p[0]`` is the initial price."""

    p0: float
    p: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.p0 <= 0.0:
            raise ValueError("initial price must be > 0")
        if not self.p:
            self.p = [self.p0]
        if any(v <= 0.0 for v in self.p):
            raise ValueError("prices must stay > 0")


@dataclass
class RngStreams:
    """Independent generators spawned from one master seed.

    Stream order is part of the reproducibility contract: price, lender
    noise, borrower noise, exploration, adversary.
    """

    master_seed: int
    price: np.random.Generator
    lender: np.random.Generator
    borrower: np.random.Generator
    exploration: np.random.Generator
    adversary: np.random.Generator


def make_streams(master_seed: int) -> RngStreams:
    """Spawn the five named RNG streams from ``master_seed``."""
    children = np.random.SeedSequence(master_seed).spawn(5)
    gens = [np.random.default_rng(c) for c in children]
    return RngStreams(master_seed, *gens)


def step_price(p_prev: float, step: LogNormalStep, rng: np.random.Generator) -> float:
    """Advance the price one slot: p_prev * exp(mu + sigma * z).

    Always consumes exactly one draw from ``rng`` (even at sigma == 0) so
    that stream alignment is independent of regime volatility.
    """
    if p_prev <= 0.0:
        raise ValueError(f"price must be > 0, got {p_prev}")
    z = rng.standard_normal()
    return p_prev * math.exp(step.mu + step.sigma * z)


def regime_at(schedule: RegimeSchedule, t: int) -> MarketRegime:
    """Regime whose half-open slot interval [start, start + duration) holds t."""
    if t < 0:
        raise IndexError(f"slot index must be >= 0, got {t}")
    start = 0
    for regime in schedule.regimes:
        if t < start + regime.duration:
            return regime
        start += regime.duration
    raise IndexError(
        f"slot {t} is beyond the schedule's total duration {start}"
    )
