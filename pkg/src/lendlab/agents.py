"""Continuum lender/borrower flow dynamics and the adversarial injector.

Per-slot relative flows are proportional to the population's marginal
utilities:

    desired_dL = L * (eta_l * lender_utility   + eps_l)
    desired_dB = B * (eta_b * borrower_utility + eps_b)

with i.i.d. Gaussian noise eps ~ N(0, zeta^2) per side per slot, truncated at
+/- 6 zeta so a single draw cannot push an aggregate negative.

Utilities are per-slot expected excess returns against the outside options:

    lender:   r*U - U*pi(c) - r_ext_lend
    borrower: alpha   * (r_ext_borrow - r + pi - Lambda*li + F)
            + (1-alpha) * (          - r + pi - Lambda*li + G)

where pi, F, G, Lambda are the closed-form risk expectations.  The borrower
mix is alpha financing-type (borrowing against the external rate) and
1 - alpha long-type (borrowing to hold the collateral asset).

The adversary replaces the borrower flow on a Bernoulli(beta) schedule drawn
from its own dedicated stream, one draw per slot, so paired runs that differ
only in beta or mode see identical scheduling randomness everywhere else.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market import MarketRegime
from .pool import PoolState, ProtocolParams
from .riskmath import risk_terms

__all__ = [
    "AgentNoise",
    "AdversaryConfig",
    "ADVERSARY_MODES",
    "lender_utility",
    "borrower_utility",
    "step_flows",
    "inject_adversary",
]

ADVERSARY_MODES = ("flip-sign", "constant-push-up", "constant-push-down")


@dataclass(frozen=True)
class AgentNoise:
    """Standard deviation of the i.i.d. per-slot flow noise."""

    zeta: float

    def __post_init__(self) -> None:
        if self.zeta < 0.0:
            raise ValueError(f"zeta must be >= 0, got {self.zeta}")


@dataclass(frozen=True)
class AdversaryConfig:
    """Bernoulli(beta) schedule of borrower-flow manipulations."""

    beta: float
    magnitude: float = 1.0
    mode: str = "flip-sign"

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta < 0.5:
            raise ValueError(f"beta must lie in [0, 0.5), got {self.beta}")
        if self.mode not in ADVERSARY_MODES:
            raise ValueError(f"mode must be one of {ADVERSARY_MODES}, got {self.mode!r}")


def lender_utility(
    state: PoolState, params: ProtocolParams, regime: MarketRegime
) -> float:
    """Per-slot expected excess return of one deposited unit."""
    u = state.utilization
    pi, _, _, _ = risk_terms(params.c, params.lt, regime.step)
    return params.r * u - u * pi - regime.r_ext_lend


def borrower_utility(
    state: PoolState, params: ProtocolParams, regime: MarketRegime
) -> float:
    """Per-slot expected excess return of one borrowed unit at loan-to-value c."""
    pi, fall, growth, lam = risk_terms(params.c, params.lt, regime.step)
    common = -params.r + pi - lam * params.li
    financing = regime.r_ext_borrow + common + fall
    long_side = common + growth
    return regime.alpha * financing + (1.0 - regime.alpha) * long_side


def step_flows(
    state: PoolState,
    params: ProtocolParams,
    regime: MarketRegime,
    rng,
) -> tuple[float, float]:
    """Desired (dB, dL) for one slot.

    ``rng`` is either a single generator (both sides draw from it, borrower
    first) or an object with ``borrower`` and ``lender`` generator attributes
    for stream-separated runs.
    """
    b_rng: np.random.Generator = getattr(rng, "borrower", rng)
    l_rng: np.random.Generator = getattr(rng, "lender", rng)
    zeta = regime.zeta
    eps_b = zeta * min(6.0, max(-6.0, b_rng.standard_normal())) if zeta > 0.0 else 0.0
    eps_l = zeta * min(6.0, max(-6.0, l_rng.standard_normal())) if zeta > 0.0 else 0.0
    desired_dB = state.B * (regime.eta_borrow * borrower_utility(state, params, regime) + eps_b)
    desired_dL = state.L * (regime.eta_lend * lender_utility(state, params, regime) + eps_l)
    return desired_dB, desired_dL


def inject_adversary(
    flows: tuple[float, float],
    t: int,
    adversary: AdversaryConfig | None,
    rng: np.random.Generator,
    *,
    B: float = 0.0,
) -> tuple[tuple[float, float], bool]:
    """Replace the borrower flow on adversarial slots.

    Consumes exactly one uniform draw per call from the dedicated adversary
    stream (the draw sequence is the schedule), so the set of adversarial
    slots depends only on the master seed and beta.  ``B`` scales the
    constant-push modes.
    """
    if adversary is None:
        return flows, False
    hit = rng.uniform() < adversary.beta
    if not hit:
        return flows, False
    dB, dL = flows
    if adversary.mode == "flip-sign":
        dB = -dB
    elif adversary.mode == "constant-push-up":
        dB = dB + adversary.magnitude * B
    else:  # constant-push-down
        dB = dB - adversary.magnitude * B
    return (dB, dL), True
