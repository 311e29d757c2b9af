"""Closed-form log-normal risk expectations for one-slot price steps.

Everything here is a pure function of a one-slot log-normal price ratio

    X = p_new / p_old = exp(mu + sigma * Z),    Z ~ N(0, 1),

and of the protocol's collateral parameters.  The four expectations are the
risk side of the lending-pool model:

* ``expected_default``        -- per-unit-debt shortfall E[max{0, 1 - X/c}]
* ``expected_price_fall_term``-- collateral opportunity cost
                                 (1/c) * (E[e^X' | X' < 0] - 1), X' the log-return
* ``expected_price_change``   -- unconditional E[X] - 1
* ``expected_liquidation``    -- per-unit-debt liquidated fraction
                                 E[(1 - (lt/c) X) / (1 - lt) * 1{X < c/lt}]

Each has a Monte-Carlo definitional oracle in the test suite; the closed forms
below are the truncated-log-normal integrals of those definitions.  The
building block is the identity

    E[e^{aU} * 1{U < u}] = exp(a*mu + a^2 sigma^2 / 2) * Phi((u - mu - a sigma^2)/sigma)

for U ~ N(mu, sigma^2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "LogNormalStep",
    "RiskDomainError",
    "std_normal_cdf",
    "expected_default",
    "expected_price_fall_term",
    "expected_price_change",
    "expected_liquidation",
    "risk_terms",
]

_SQRT2 = math.sqrt(2.0)


class RiskDomainError(ValueError):
    """Raised when a risk expectation is evaluated outside its domain."""


@dataclass(frozen=True)
class LogNormalStep:
    """One-slot log-normal price step: log-return ~ N(mu, sigma^2).

    ``sigma == 0`` is accepted as the degenerate deterministic step; the
    expectations that divide by sigma reject it at call time.
    """

    mu: float
    sigma: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise RiskDomainError("mu and sigma must be finite")
        if self.sigma < 0.0:
            raise RiskDomainError(f"sigma must be >= 0, got {self.sigma}")


def std_normal_cdf(x: float) -> float:
    """Standard normal CDF Phi(x), accurate to ~1e-15 via erfc.

    Saturates cleanly at 0.0 / 1.0 for large |x|; Phi(x) + Phi(-x) == 1 to
    floating precision.
    """
    return 0.5 * math.erfc(-x / _SQRT2)


def _require_positive_sigma(step: LogNormalStep) -> None:
    if step.sigma <= 0.0:
        raise RiskDomainError("this expectation requires sigma > 0")


def expected_default(c: float, step: LogNormalStep) -> float:
    """Per-unit-debt default rate pi(c) = E[max{0, 1 - X/c}].

    A position opened at loan-to-value ``c`` defaults when the one-slot price
    ratio X drops below c; the shortfall per unit of debt is 1 - X/c.
    Closed form:

        pi(c) = Phi((ln c - mu)/sigma)
                - (exp(mu + sigma^2/2) / c) * Phi((ln c - mu - sigma^2)/sigma)

    ``c >= 1`` is legal math (the pool layer enforces c < 1 separately).
    """
    if c <= 0.0:
        raise RiskDomainError(f"collateral factor must be > 0, got {c}")
    _require_positive_sigma(step)
    mu, sigma = step.mu, step.sigma
    z = (math.log(c) - mu) / sigma
    return std_normal_cdf(z) - (math.exp(mu + 0.5 * sigma * sigma) / c) * std_normal_cdf(
        z - sigma
    )


def expected_price_fall_term(c: float, step: LogNormalStep) -> float:
    """Collateral opportunity-cost term F(c) for a position at loan-to-value c.

    The holder of 1/c units of collateral value bears the conditional
    expected one-slot loss given that the price falls:

        F(c) = (1/c) * (E[X | X < 1] - 1)
             = (1/c) * (exp(mu + sigma^2/2) * Phi((-mu - sigma^2)/sigma)
                        / Phi(-mu/sigma) - 1)

    Negative whenever mu >= 0 (a fall, conditioned on falling, loses money).
    """
    if c <= 0.0:
        raise RiskDomainError(f"collateral factor must be > 0, got {c}")
    _require_positive_sigma(step)
    mu, sigma = step.mu, step.sigma
    p_fall = std_normal_cdf(-mu / sigma)
    if p_fall == 0.0:
        raise RiskDomainError("fall probability negligible")
    conditional = (
        math.exp(mu + 0.5 * sigma * sigma)
        * std_normal_cdf((-mu - sigma * sigma) / sigma)
        / p_fall
    )
    return (conditional - 1.0) / c


def expected_price_change(step: LogNormalStep) -> float:
    """Unconditional expected one-slot relative price change G = E[X] - 1."""
    return math.expm1(step.mu + 0.5 * step.sigma * step.sigma)


def expected_liquidation(c: float, lt: float, step: LogNormalStep) -> float:
    """Per-unit-debt expected liquidated fraction Lambda(c, lt).

    A position at loan-to-value c crosses the liquidation threshold lt when
    the price ratio X falls below c/lt; restoring loan-to-value to lt then
    liquidates gamma = (1 - (lt/c) X) / (1 - lt) of the debt.  Integrating the
    truncated log-normal:

        Lambda = [ Phi((ln(c/lt) - mu)/sigma)
                   - (lt/c) * exp(mu + sigma^2/2)
                     * Phi((ln(c/lt) - mu - sigma^2)/sigma) ] / (1 - lt)

    Nonnegative; vanishes as c/lt -> 0 (threshold unreachable in one slot).
    """
    if not 0.0 < c < lt < 1.0:
        raise RiskDomainError(
            f"need 0 < c < lt < 1, got c={c}, lt={lt}"
        )
    _require_positive_sigma(step)
    mu, sigma = step.mu, step.sigma
    z = (math.log(c / lt) - mu) / sigma
    raw = (
        std_normal_cdf(z)
        - (lt / c) * math.exp(mu + 0.5 * sigma * sigma) * std_normal_cdf(z - sigma)
    ) / (1.0 - lt)
    # The integrand is pointwise >= 0; tiny negative values are pure float
    # cancellation in the far tail.
    return max(0.0, raw)


def risk_terms(
    c: float, lt: float, step: LogNormalStep
) -> tuple[float, float, float, float]:
    """All four expectations (pi, F, G, Lambda) at once.

    For ``sigma == 0`` the deterministic limits are returned instead of
    raising, so degenerate test scenarios stay well defined: the price ratio
    is the constant x = e^mu, hence

        pi     = max(0, 1 - x/c)
        F      = (x - 1)/c if x < 1 else 0      (falls happen surely or never)
        G      = x - 1
        Lambda = max(0, (1 - (lt/c) x)/(1 - lt)) if x < c/lt else 0
    """
    if step.sigma == 0.0:
        x = math.exp(step.mu)
        pi = max(0.0, 1.0 - x / c)
        fall = (x - 1.0) / c if x < 1.0 else 0.0
        lam = (1.0 - (lt / c) * x) / (1.0 - lt) if x < c / lt else 0.0
        return pi, fall, x - 1.0, max(0.0, lam)
    return (
        expected_default(c, step),
        expected_price_fall_term(c, step),
        expected_price_change(step),
        expected_liquidation(c, lt, step),
    )
