"""Closed-form equilibrium rate and utilization targets.

The pool is at rest exactly when both marginal utilities vanish.  Setting the
borrower utility to zero gives the equilibrium rate

    r* = alpha * r_ext_borrow + pi(c) + alpha * F(c) + (1 - alpha) * G,

(the liquidation term is absent because a well-planned (c, lt) keeps it
negligible; it reappears in dynamics if mis-set).  Setting the lender utility
to zero at r = r* gives the utilization target

    U* = r_ext_lend / (r* - pi(c)),

clamped to 1 when lenders' outside option cannot be met — the ``degenerate``
flag marks that trapped regime, along with non-positive equilibrium rates.

These closed forms serve double duty: the protocol-side reference the
controllers chase, and the oracle the test suite compares trajectories
against.
"""

from __future__ import annotations

from dataclasses import dataclass

from .market import MarketRegime
from .riskmath import risk_terms

__all__ = ["EquilibriumPoint", "EquilibriumError", "equilibrium_rate", "equilibrium_utilization"]


class EquilibriumError(ValueError):
    """No non-trivial equilibrium exists for the given regime."""


@dataclass(frozen=True)
class EquilibriumPoint:
    """Equilibrium rate/utilization pair with a degeneracy marker."""

    r_star: float
    u_star: float
    degenerate: bool

    def __post_init__(self) -> None:
        if not 0.0 < self.u_star <= 1.0:
            raise ValueError(f"u_star must lie in (0,1], got {self.u_star}")


def equilibrium_rate(regime: MarketRegime, c: float) -> float:
    """Rate at which the borrower population is indifferent.

    Raises ``EquilibriumError`` when the closed form is non-positive (no
    non-trivial equilibrium: the risk terms swamp the outside option).
    """
    if not 0.0 < c < 1.0:
        raise ValueError(f"collateral factor must lie in (0,1), got {c}")
    lt = 0.5 * (1.0 + c)  # Lambda is not part of r*; any valid lt works here
    pi, fall, growth, _ = risk_terms(c, lt, regime.step)
    r_star = regime.alpha * (regime.r_ext_borrow + fall) + pi + (1.0 - regime.alpha) * growth
    if r_star <= 0.0:
        raise EquilibriumError(
            f"no non-trivial equilibrium: closed-form rate is {r_star}"
        )
    return r_star


def equilibrium_utilization(
    regime: MarketRegime, c: float, r_star: float
) -> EquilibriumPoint:
    """Utilization at which lenders are indifferent, given the rate r_star.

    U* = min(1, r_ext_lend / (r_star - pi(c))); the clamp binding, or
    r_star <= pi(c) (lenders under water at any utilization), or a
    non-positive r_star all set the ``degenerate`` flag.
    """
    if regime.eta_lend <= 0.0:
        raise ValueError("equilibrium utilization requires eta_lend > 0")
    lt = 0.5 * (1.0 + c)
    pi, _, _, _ = risk_terms(c, lt, regime.step)
    margin = r_star - pi
    if r_star <= 0.0 or margin <= 0.0:
        return EquilibriumPoint(r_star=r_star, u_star=1.0, degenerate=True)
    raw = regime.r_ext_lend / margin
    if raw > 1.0:
        return EquilibriumPoint(r_star=r_star, u_star=1.0, degenerate=True)
    return EquilibriumPoint(r_star=r_star, u_star=raw, degenerate=False)
