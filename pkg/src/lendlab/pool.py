"""Deterministic per-slot pool state machine on aggregate continuum state.

One slot of pool life, in order:

1. ``apply_default``    -- write down debt that went underwater on the price move
2. ``accrue_interest``  -- credit lenders exactly what borrowers are debited
3. ``apply_liquidation``-- restore aggregate loan-to-value to the threshold
4. (the controller/planner set the next parameters)
5. ``admit_flows``      -- admit lender/borrower flows, clipped to liquidity

State is a single aggregate (L, B, C) triple: with every rational borrower
sitting at the maximum loan-to-value, per-account ledgers collapse to the
aggregate without loss.  ``run_slot`` composes the five stages and emits the
slot record that the simulation harness serializes.

Bookkeeping conventions (documented because the aggregate view leaves a
choice): a per-unit-debt default ``d`` removes the fraction ``d`` of debt,
seizes the same fraction of collateral, and costs the supply exactly the
unrecovered value ``d * B`` — so the per-supply default fraction is ``U * d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

__all__ = [
    "PoolState",
    "ProtocolParams",
    "TimeslotRecord",
    "PoolInvariantError",
    "apply_default",
    "accrue_interest",
    "apply_liquidation",
    "admit_flows",
    "run_slot",
]


class PoolInvariantError(RuntimeError):
    """A pool-state invariant or parameter feasibility condition failed."""


@dataclass(frozen=True)
class PoolState:
    """Aggregate pool state at the start of slot ``t``."""

    t: int
    p: float
    L: float
    B: float
    C: float
    cumulative_default: float = 0.0
    cumulative_liquidated: float = 0.0

    def __post_init__(self) -> None:
        if self.p <= 0.0:
            raise PoolInvariantError(f"price must be > 0, got {self.p}")
        if not (
            math.isfinite(self.L) and math.isfinite(self.B) and math.isfinite(self.C)
        ):
            raise PoolInvariantError("pool aggregates must be finite")
        if self.L < 0.0 or self.B < 0.0 or self.C < 0.0:
            raise PoolInvariantError(
                f"pool aggregates must be >= 0, got L={self.L}, B={self.B}, C={self.C}"
            )
        if self.B > self.L * (1.0 + 1e-12):
            raise PoolInvariantError(f"debt {self.B} exceeds supply {self.L}")

    @property
    def utilization(self) -> float:
        """U = B / L, taken as 0 for an empty pool."""
        return self.B / self.L if self.L > 0.0 else 0.0


@dataclass(frozen=True)
class ProtocolParams:
    """Per-slot protocol parameters: rate, collateral factor, threshold, incentive."""

    r: float
    c: float
    lt: float
    li: float

    def __post_init__(self) -> None:
        if not 0.0 < self.c < self.lt < 1.0:
            raise PoolInvariantError(
                f"need 0 < c < lt < 1, got c={self.c}, lt={self.lt}"
            )
        if self.r < 0.0 or self.li < 0.0:
            raise PoolInvariantError("r and li must be >= 0")


@dataclass
class TimeslotRecord:
    """One CSV row of a simulation run.

    The pool fills the flow/bookkeeping fields; the harness fills the
    controller/planner annotations and the closed-form targets.
    """

    t: int
    p: float
    r: float
    c: float
    lt: float
    li: float
    L: float
    B: float
    U: float
    applied_dB: float
    applied_dL: float
    default_fraction: float
    liquidated_fraction: float
    controller_mode: str = ""
    adversarial_flag: bool = False
    optimizer_fired_flag: bool = False
    clipped_flag: bool = False
    r_star: float = math.nan
    u_star: float = math.nan


def apply_default(
    state: PoolState, p_new: float, params: ProtocolParams
) -> tuple[PoolState, float]:
    """Write down debt made underwater by the move from state.p to p_new.

    With every position at loan-to-value c, the per-unit-debt shortfall is
    d = max{0, 1 - p_new / (c * p_old)}; the supply absorbs d * B and the
    defaulted share of debt and collateral leaves the pool.  Returns the new
    state and the per-supply default fraction U * d.
    """
    if p_new <= 0.0:
        raise PoolInvariantError(f"price must be > 0, got {p_new}")
    d = max(0.0, 1.0 - p_new / (params.c * state.p))
    if d == 0.0 or state.B == 0.0:
        return replace(state, p=p_new), 0.0
    written_down = d * state.B
    pool_fraction = state.utilization * d
    new = replace(
        state,
        p=p_new,
        L=state.L - written_down,
        B=state.B * (1.0 - d),
        C=state.C * (1.0 - d),
        cumulative_default=state.cumulative_default + written_down,
    )
    return new, pool_fraction


def accrue_interest(state: PoolState, params: ProtocolParams) -> PoolState:
    """Accrue one slot of interest; lender credit equals borrower debit exactly."""
    if params.r == 0.0 or state.B == 0.0:
        return state
    interest = params.r * state.B
    return replace(state, L=state.L + interest, B=state.B + interest)


def apply_liquidation(
    state: PoolState, p_new: float, params: ProtocolParams
) -> tuple[PoolState, float]:
    """Liquidate the minimum debt restoring aggregate LTV to the threshold.

    Trigger: B / (C * p_new) > lt.  Solving (B - g) = lt * (C*p - g*(1+li))
    gives g = (B - lt*C*p) / (1 - lt*(1+li)); the liquidator repays g of debt
    and takes g*(1+li) of collateral value.  Returns the per-debt liquidated
    fraction g / B.
    """
    if p_new <= 0.0:
        raise PoolInvariantError(f"price must be > 0, got {p_new}")
    state = replace(state, p=p_new)
    collateral_value = state.C * p_new
    if state.B <= params.lt * collateral_value or state.B == 0.0:
        return state, 0.0
    denom = 1.0 - params.lt * (1.0 + params.li)
    if denom <= 0.0:
        raise PoolInvariantError(
            "unreachable-restoration: lt*(1+li) >= 1, liquidation cannot "
            "restore the target loan-to-value"
        )
    gamma = max(0.0, (state.B - params.lt * collateral_value) / denom)
    gamma = min(gamma, state.B)
    seized = gamma * (1.0 + params.li) / p_new
    new = replace(
        state,
        B=state.B - gamma,
        C=max(0.0, state.C - seized),
        cumulative_liquidated=state.cumulative_liquidated + gamma,
    )
    if new.B > 0.0 and new.C * p_new > 0.0:
        if new.B / (new.C * p_new) > params.lt + 1e-9:
            raise PoolInvariantError("liquidation failed to restore loan-to-value")
    return new, gamma / state.B


def admit_flows(
    state: PoolState,
    desired_dB: float,
    desired_dL: float,
    params: ProtocolParams,
    *,
    remargin: bool = True,
    max_inflow_frac: float | None = None,
    max_outflow_frac: float | None = None,
) -> tuple[PoolState, float, float]:
    """Admit one slot of lender and borrower flows.

    Deposits and repayments are taken in full; withdrawals are clipped so the
    pool keeps L >= B, and borrows are clipped to the available liquidity.
    New debt posts collateral at loan-to-value exactly c; repayment releases
    collateral proportionally.  With ``remargin`` (the continuum default) the
    aggregate is re-margined to LTV = c at slot end.

    The optional per-slot relative caps bound |flow| by frac * aggregate;
    they default to off, and callers that enable them still observe the
    clipped flag through the difference between desired and applied flows.
    """
    L, B, C, p = state.L, state.B, state.C, state.p

    dL = desired_dL
    if max_inflow_frac is not None and dL > 0.0:
        dL = min(dL, max_inflow_frac * L)
    if max_outflow_frac is not None and dL < 0.0:
        dL = max(dL, -max_outflow_frac * L)
    dL = max(dL, -max(0.0, L - B))  # withdrawals stop at the unutilized supply
    L_new = L + dL
    if L_new < B:  # guard against absorption when B is many orders below L
        L_new = B
        dL = L_new - L

    dB = desired_dB
    if max_inflow_frac is not None and dB > 0.0:
        dB = min(dB, max_inflow_frac * B)
    if max_outflow_frac is not None and dB < 0.0:
        dB = max(dB, -max_outflow_frac * B)
    dB = min(dB, max(0.0, L_new - B))  # borrows stop at the available asset
    dB = max(dB, -B)  # repay at most the outstanding debt
    B_new = B + dB
    if B_new > L_new:
        B_new = L_new
        dB = B_new - B

    if dB > 0.0:
        C = C + dB / (params.c * p)
    elif dB < 0.0 and B > 0.0:
        C = C * (1.0 + dB / B)
    if remargin:
        C = B_new / (params.c * p)

    new = replace(state, L=L_new, B=B_new, C=C)
    return new, dB, dL


def run_slot(
    state: PoolState,
    p_new: float,
    params: ProtocolParams,
    flows: tuple[float, float],
    *,
    flow_params: ProtocolParams | None = None,
    remargin: bool = True,
    max_inflow_frac: float | None = None,
    max_outflow_frac: float | None = None,
) -> tuple[PoolState, TimeslotRecord]:
    """Execute one full slot and emit its record.

    ``params`` governs the carry-over stages (default, interest, liquidation);
    ``flow_params`` — when the controller updates parameters mid-slot —
    governs admission and is what the record reports.  Left unset, the slot
    runs under a single parameter set, matching manual chaining of the four
    operations.
    """
    desired_dB, desired_dL = flows
    after_default, default_fraction = apply_default(state, p_new, params)
    after_interest = accrue_interest(after_default, params)
    after_liq, liquidated_fraction = apply_liquidation(after_interest, p_new, params)
    admitted_params = flow_params if flow_params is not None else params
    final, applied_dB, applied_dL = admit_flows(
        after_liq,
        desired_dB,
        desired_dL,
        admitted_params,
        remargin=remargin,
        max_inflow_frac=max_inflow_frac,
        max_outflow_frac=max_outflow_frac,
    )
    record = TimeslotRecord(
        t=state.t,
        p=p_new,
        r=admitted_params.r,
        c=admitted_params.c,
        lt=admitted_params.lt,
        li=admitted_params.li,
        L=final.L,
        B=final.B,
        U=final.utilization,
        applied_dB=applied_dB,
        applied_dL=applied_dL,
        default_fraction=default_fraction,
        liquidated_fraction=liquidated_fraction,
        clipped_flag=(applied_dB != desired_dB) or (applied_dL != desired_dL),
    )
    return replace(final, t=state.t + 1), record
