"""Offline evaluation of simulation runs: convergence, optimality, robustness.

Everything here is a pure function of run logs (sequences of
``TimeslotRecord``), so every number is recomputable from the emitted CSVs.

Three measurements:

- **Convergence profiles**: per regime change, the trajectory of
  |r_tau - r_star| indexed by slots-since-disruption, aggregated across
  seeds into empirical (1-delta)-quantile envelopes.
- **Optimality index**: over the detected equilibrium slots T_e, the mean of
  -(U_t - u_opt)^2 - gamma * (U_t*pi(c_t) + Lambda(c_t, lt_t)); always <= 0,
  with 0 the perfect score.
- **Adversarial susceptibility**: for coupled (adversary-blind,
  adversary-informed) run pairs sharing all randomness, the mean cumulative
  rate gap over the informed run's equilibrium slots.

T_e itself is operationalized as flow quiescence: slot t belongs to T_e when
both |applied_dB|/B and |applied_dL|/L stayed below 3*zeta*tol_mult (with an
absolute floor of 1e-12 so that zeta = 0 still admits exactly-quiet slots)
for `dwell` consecutive slots ending at t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .pool import TimeslotRecord
from .riskmath import LogNormalStep, risk_terms

__all__ = [
    "ConvergenceProfile",
    "EquilibriumSlotSet",
    "EmptyEquilibriumSetError",
    "equilibrium_slots",
    "convergence_profile",
    "optimality_index",
    "adversarial_susceptibility",
]

_ZERO_ZETA_FLOOR = 1e-12


class EmptyEquilibriumSetError(ValueError):
    """No slot qualified as at-equilibrium; distinct from a zero score."""


@dataclass(frozen=True)
class EquilibriumSlotSet:
    """Slots detected as at-equilibrium, with the detection knobs used."""

    slots: tuple[int, ...]
    dwell: int
    tol: float

    def __contains__(self, t: int) -> bool:
        return t in set(self.slots)

    def __len__(self) -> int:
        return len(self.slots)


@dataclass
class ConvergenceProfile:
    """Aligned |r - r_star| trajectories, one per (seed, disruption)."""

    trajectories: list[np.ndarray] = field(default_factory=list)

    def add(self, errors: Sequence[float]) -> None:
        arr = np.asarray(errors, dtype=float)
        if arr.size and arr.min() < 0.0:
            raise ValueError("error trajectories must be >= 0")
        self.trajectories.append(arr)

    @property
    def horizon(self) -> int:
        """Longest slots-since-disruption index common to every trajectory."""
        if not self.trajectories:
            return 0
        return min(t.size for t in self.trajectories)

    def envelope(self, delta: float) -> np.ndarray:
        """Pointwise empirical (1-delta)-quantile across trajectories."""
        if not 0.0 < delta < 1.0:
            raise ValueError(f"delta must lie in (0,1), got {delta}")
        if not self.trajectories:
            raise ValueError("no trajectories collected")
        h = self.horizon
        stacked = np.stack([t[:h] for t in self.trajectories])
        return np.quantile(stacked, 1.0 - delta, axis=0)


def equilibrium_slots(
    records: Sequence[TimeslotRecord],
    zeta: float,
    dwell: int = 20,
    tol_mult: float = 1.0,
) -> EquilibriumSlotSet:
    """Detect flow-quiet slots: dwell consecutive slots of tiny relative flows.

    Deterministic given the log and (dwell, tol_mult).  The tolerance is
    3*zeta*tol_mult — three noise standard deviations of the relative flow —
    floored at 1e-12 so noiseless runs are measurable.
    """
    if dwell < 1:
        raise ValueError(f"dwell must be >= 1, got {dwell}")
    if zeta < 0.0 or tol_mult <= 0.0:
        raise ValueError("zeta must be >= 0 and tol_mult > 0")
    tol = max(3.0 * zeta * tol_mult, _ZERO_ZETA_FLOOR)
    slots = []
    quiet_run = 0
    for rec in records:
        rel_db = abs(rec.applied_dB) / rec.B if rec.B > 0.0 else abs(rec.applied_dB)
        rel_dl = abs(rec.applied_dL) / rec.L if rec.L > 0.0 else abs(rec.applied_dL)
        quiet_run = quiet_run + 1 if (rel_db < tol and rel_dl < tol) else 0
        if quiet_run >= dwell:
            slots.append(rec.t)
    return EquilibriumSlotSet(slots=tuple(slots), dwell=dwell, tol=tol)


def convergence_profile(
    runs: Sequence[Sequence[TimeslotRecord]],
    disruptions: Sequence[int],
) -> ConvergenceProfile:
    """Per-disruption |r - r_star| trajectories pooled across runs.

    ``disruptions`` are the slots at which a regime change lands (slot 0 is
    included implicitly: the initial transient is itself a disruption).  The
    logged equilibrium column is the oracle, so the profile is recomputable
    from CSV alone.
    """
    starts = sorted({0, *disruptions})
    profile = ConvergenceProfile()
    for records in runs:
        n = len(records)
        bounds = [s for s in starts if s < n] + [n]
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            seg = records[lo:hi]
            errors = [abs(rec.r - rec.r_star) for rec in seg]
            if any(math.isnan(e) for e in errors):
                raise ValueError(
                    f"records in [{lo},{hi}) lack a logged equilibrium rate"
                )
            profile.add(errors)
    return profile


def optimality_index(
    records: Sequence[TimeslotRecord],
    te: EquilibriumSlotSet,
    u_opt: float,
    gamma: float,
    step: LogNormalStep | None = None,
) -> float:
    """Mean equilibrium-slot score -(U-u_opt)^2 - gamma*(U*pi + Lambda).

    ``step`` supplies the price-move law for the risk penalty; it may be
    omitted when gamma = 0 (the penalty vanishes).  Raises
    ``EmptyEquilibriumSetError`` when T_e is empty — an unconverged run is
    not a perfect run.
    """
    if gamma < 0.0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if gamma > 0.0 and step is None:
        raise ValueError("gamma > 0 requires the price-step law for pi and Lambda")
    members = set(te.slots)
    scores = []
    for rec in records:
        if rec.t not in members:
            continue
        score = -((rec.U - u_opt) ** 2)
        if gamma > 0.0:
            pi, _, _, lam = risk_terms(rec.c, rec.lt, step)
            score -= gamma * (rec.U * pi + lam)
        scores.append(score)
    if not scores:
        raise EmptyEquilibriumSetError(
            "no equilibrium slots in the log; optimality index undefined"
        )
    return float(np.mean(scores))


def adversarial_susceptibility(
    paired_runs: Sequence[tuple[Sequence[TimeslotRecord], Sequence[TimeslotRecord]]],
    zeta: float,
    dwell: int = 20,
    tol_mult: float = 1.0,
) -> float:
    """Mean cumulative rate gap between blind and informed coupled runs.

    Each pair is (adversary-blind, adversary-informed) over identical
    randomness; the informed run — which drops flagged samples before each
    fit — supplies the equilibrium slots, and the gap sums r_blind - r_informed
    over them.  With no adversary the runs coincide and the score is exactly 0.
    """
    if not paired_runs:
        raise ValueError("need at least one run pair")
    gaps = []
    for blind, informed in paired_runs:
        if len(blind) != len(informed):
            raise ValueError("paired runs must cover identical horizons")
        te = equilibrium_slots(informed, zeta, dwell=dwell, tol_mult=tol_mult)
        members = set(te.slots)
        by_t = {rec.t: rec for rec in blind}
        gap = 0.0
        for rec in informed:
            if rec.t in members:
                gap += by_t[rec.t].r - rec.r
        gaps.append(gap)
    return float(np.mean(gaps))
