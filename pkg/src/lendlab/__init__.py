"""lendlab: a discrete-time simulation laboratory for adaptive borrow-lending pools.

Layered bottom-up:

* ``riskmath``     closed-form log-normal risk expectations
* ``market``       price paths and piecewise-constant market regimes
* ``pool``         reserve/debt/collateral bookkeeping for one timeslot
* ``agents``       continuum lender/borrower flow dynamics and adversaries
* ``equilibrium``  closed-form equilibrium rate and utilization targets
* ``controllers``  fast interest-rate controllers (recursive least squares,
                   trimmed-residual robust variant, piecewise-linear baseline)
* ``planner``      slow collateral-factor / liquidation-threshold planner
* ``metrics``      convergence, optimality, and susceptibility measurements
* ``harness``      scenario runner with seeded, CSV-logged closed-loop runs
* ``cli``          ``lendlab`` command-line entry point
"""

from __future__ import annotations

__version__ = "0.1.0"
