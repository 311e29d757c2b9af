"""The slow loop: market estimation and collateral-factor planning.

While the fast controller chases the equilibrium rate, the planner watches
the lender side and the price history, reconstructs the market parameters,
and periodically re-plans the collateral factor c and liquidation threshold
lt.  Pipeline per firing:

1. lender regression  dL_rel = eta_l * (x - r_o^l),  x = r*U - U*pi(c),
   giving (r_o^l, eta_l) from the fitted line;
2. empirical (mu, sigma) from recent one-slot log-returns;
3. inversion of the closed-form equilibrium rate for the borrowers' outside
   rate:  alpha * r_o^b = r_hat_star - pi(c) - alpha*F(c) - (1-alpha)*G;
4. once the estimator stops moving (|theta_t - theta_{t-1}| < delta_theta),
   minimize the utilization-tracking objective

       Psi(c) = (U(c) - u_opt)^2 + gamma * U(c) * pi(c),
       U(c)   = r_o^l / (b + a/c),
       a      = alpha * c * F(c)   (c-independent),
       b      = alpha * r_o^b + (1 - alpha) * G,

   by gradient descent from a random start, cross-checked against a
   100-point grid (the grid wins any disagreement beyond one cell), and
5. pick the smallest liquidation threshold with expected per-slot
   liquidation below ``eps_liq``.

The planner then sleeps ``T_optimizer`` slots and starts a fresh window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .controllers import RegressionWindow, SingularDesignError, ols_fit
from .pool import PoolState
from .riskmath import LogNormalStep, RiskDomainError, risk_terms

__all__ = [
    "LenderRegressionWindow",
    "PlannerConfig",
    "PlannerState",
    "MarketEstimate",
    "PlannerInfeasibleError",
    "estimate_lender_params",
    "estimate_vol",
    "invert_for_r_ob",
    "optimality_objective",
    "optimize_collateral",
    "choose_liquidation_threshold",
    "planner_step",
]

_GRID = (np.arange(100) + 0.5) / 100.0  # the ~100 collateral levels scanned
_LT_MARGIN = 1e-9


class PlannerInfeasibleError(ValueError):
    """No feasible collateral factor / liquidation threshold exists."""


class LenderRegressionWindow(RegressionWindow):
    """Sliding (x, dL_rel) window with x = r*U - U*pi(c)."""


@dataclass(frozen=True)
class PlannerConfig:
    """Thresholds, cadence, and objective weights of the slow loop."""

    u_opt: float
    gamma: float = 0.0
    delta_l: float = 1e-4
    delta_theta: float = 1e-4
    t_sleep: int = 50
    T_optimizer: int = 500
    eps_liq: float = 1e-6
    vol_window: int = 200
    W: int = 200
    alpha: float = 1.0
    li: float = 0.0
    gd_kappa: float = 0.02
    gd_tol: float = 1e-7
    gd_max_iters: int = 500

    def __post_init__(self) -> None:
        if not 0.0 < self.u_opt < 1.0:
            raise ValueError(f"u_opt must lie in (0,1), got {self.u_opt}")
        for name in ("delta_l", "delta_theta", "eps_liq"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be > 0")
        if self.vol_window < 2 or self.W < 2:
            raise ValueError("vol_window and W must be >= 2")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0,1]")
        if self.gamma < 0.0 or self.li < 0.0:
            raise ValueError("gamma and li must be >= 0")


@dataclass(frozen=True)
class MarketEstimate:
    """The planner's reconstruction of the hidden market parameters."""

    r_o_l_hat: float
    r_o_b_hat: float
    eta_l_hat: float
    mu_hat: float
    sigma_hat: float
    converged: bool = True


@dataclass
class PlannerState:
    """Mutable slow-loop state owned by one simulation."""

    window: LenderRegressionWindow
    c: float
    lt: float
    sleep_remaining: int = 0
    prev_theta: tuple[float, float] | None = None
    price_history: list[float] = field(default_factory=list)
    estimate: MarketEstimate | None = None
    fires: int = 0


def estimate_lender_params(window: LenderRegressionWindow) -> tuple[float, float]:
    """(r_o^l, eta_l) from the lender line dL_rel = -eta_l*r_o^l + eta_l*x."""
    est = ols_fit(window)
    if abs(est.theta1) < 1e-9:
        raise SingularDesignError("lender elasticity unidentifiable (theta1 ~ 0)")
    return -est.theta0 / est.theta1, est.theta1


def estimate_vol(prices) -> tuple[float, float]:
    """Sample mean / unbiased std of one-slot log-returns of a price slice."""
    p = np.asarray(prices, dtype=float)
    if p.size < 2:
        raise ValueError(f"need >= 2 prices, got {p.size}")
    if np.any(p <= 0.0):
        raise ValueError("prices must be > 0")
    lr = np.diff(np.log(p))
    sigma = float(lr.std(ddof=1)) if lr.size >= 2 else 0.0
    return float(lr.mean()), sigma


def invert_for_r_ob(
    r_hat_star: float, c: float, mu_hat: float, sigma_hat: float, alpha: float
) -> float:
    """Solve the closed-form rate for the borrowers' outside rate.

    alpha * r_o^b = r_hat_star - pi(c) - alpha*F(c) - (1-alpha)*G.
    """
    if alpha <= 0.0:
        raise ValueError("inversion undefined for alpha = 0 (no financing borrowers)")
    step = LogNormalStep(mu=mu_hat, sigma=sigma_hat)
    lt = 0.5 * (1.0 + c)  # Lambda unused; any valid threshold
    pi, fall, growth, _ = risk_terms(c, lt, step)
    return (r_hat_star - pi - alpha * fall - (1.0 - alpha) * growth) / alpha


def _implied_utilization(
    c: float, estimate: MarketEstimate, alpha: float
) -> float:
    """U(c) = r_o^l / (b + a/c); raises on infeasible c."""
    step = LogNormalStep(mu=estimate.mu_hat, sigma=estimate.sigma_hat)
    lt = 0.5 * (1.0 + c)
    try:
        _, fall, growth, _ = risk_terms(c, lt, step)
    except RiskDomainError as exc:
        raise PlannerInfeasibleError(str(exc)) from exc
    denom = alpha * estimate.r_o_b_hat + (1.0 - alpha) * growth + alpha * fall
    if denom <= 0.0:
        raise PlannerInfeasibleError(f"non-positive lender margin at c={c}")
    u = estimate.r_o_l_hat / denom
    if not 0.0 < u <= 1.0:
        raise PlannerInfeasibleError(f"implied utilization {u} outside (0,1] at c={c}")
    return u


def optimality_objective(
    c: float, estimate: MarketEstimate, config: PlannerConfig, alpha: float
) -> float:
    """Psi(c): squared utilization tracking error plus the default penalty."""
    if not 0.0 < c < 1.0:
        raise PlannerInfeasibleError(f"collateral factor {c} outside (0,1)")
    u = _implied_utilization(c, estimate, alpha)
    step = LogNormalStep(mu=estimate.mu_hat, sigma=estimate.sigma_hat)
    lt = 0.5 * (1.0 + c)
    pi = risk_terms(c, lt, step)[0]
    return (u - config.u_opt) ** 2 + config.gamma * u * pi


def optimize_collateral(
    estimate: MarketEstimate,
    config: PlannerConfig,
    alpha: float,
    rng: np.random.Generator,
) -> float:
    """Minimize Psi over c: random-start descent, grid-verified.

    The 100-point grid scan is authoritative: the descent result is kept only
    if it lands within one grid cell of the grid argmin (then the lower of
    the two wins).  Raises ``PlannerInfeasibleError`` when no grid point is
    feasible.
    """

    def psi(c: float) -> float:
        try:
            return optimality_objective(c, estimate, config, alpha)
        except PlannerInfeasibleError:
            return math.inf

    grid_vals = np.array([psi(c) for c in _GRID])
    if not np.any(np.isfinite(grid_vals)):
        raise PlannerInfeasibleError("no feasible collateral factor on the grid")
    c_grid = float(_GRID[int(np.argmin(grid_vals))])
    spacing = float(_GRID[1] - _GRID[0])

    c_gd = rng.uniform()
    h = 1e-5
    for _ in range(config.gd_max_iters):
        lo, hi = max(c_gd - h, 1e-6), min(c_gd + h, 1.0 - 1e-6)
        f_lo, f_hi = psi(lo), psi(hi)
        if not (math.isfinite(f_lo) and math.isfinite(f_hi)):
            break  # wandered infeasible; the grid result stands
        grad = (f_hi - f_lo) / (hi - lo)
        step = config.gd_kappa * grad
        c_next = min(1.0 - 1e-6, max(1e-6, c_gd - step))
        if abs(c_next - c_gd) < config.gd_tol:
            c_gd = c_next
            break
        c_gd = c_next

    if abs(c_gd - c_grid) <= spacing and psi(c_gd) < psi(c_grid):
        return c_gd
    return c_grid


def choose_liquidation_threshold(
    c: float,
    mu_hat: float,
    sigma_hat: float,
    eps_liq: float,
    li: float,
) -> float:
    """Smallest lt in (c, 1) with expected liquidation <= eps_liq.

    Also enforces 1 - lt*(1+li) > 0 so restoration stays solvable.  The
    expected-liquidation curve explodes as lt -> 1, so the feasible set is an
    interval on the decreasing branch; an ascending scan finds the first
    feasible cell and bisection tightens it to ~1e-12.
    """
    if not 0.0 < c < 1.0:
        raise ValueError(f"collateral factor must lie in (0,1), got {c}")
    step = LogNormalStep(mu=mu_hat, sigma=sigma_hat)
    cap = min(1.0, 1.0 / (1.0 + li)) - _LT_MARGIN
    lo = c + _LT_MARGIN
    if lo >= cap:
        raise PlannerInfeasibleError(
            f"no admissible threshold between c={c} and cap={cap}"
        )

    def lam(lt: float) -> float:
        return risk_terms(c, lt, step)[3]

    if not eps_liq < math.inf:
        return lo
    if lam(lo) <= eps_liq:
        return lo

    scan = np.linspace(lo, cap, 200)
    feasible_idx = None
    for i in range(1, scan.size):
        if lam(float(scan[i])) <= eps_liq:
            feasible_idx = i
            break
    if feasible_idx is None:
        raise PlannerInfeasibleError(
            f"expected liquidation exceeds {eps_liq} everywhere in ({c}, {cap})"
        )
    bad, good = float(scan[feasible_idx - 1]), float(scan[feasible_idx])
    while good - bad > 1e-12:
        mid = 0.5 * (bad + good)
        if lam(mid) <= eps_liq:
            good = mid
        else:
            bad = mid
    return good


def planner_step(
    state: PlannerState,
    slot_observation: tuple[float, float, float],
    pool_snapshot: PoolState,
    controller_output: float,
    config: PlannerConfig,
    rng: np.random.Generator,
) -> tuple[float, float] | None:
    """One slow-loop tick; returns (c_new, lt_new) when the optimizer fires.

    ``slot_observation`` is last slot's (deployed rate, utilization, dL_rel);
    ``controller_output`` is the fast loop's current equilibrium-rate
    estimate.  Quiet lender markets (|dL_rel| < delta_l) reset the window and
    sleep; after each refit the previous and current theta are compared, and
    estimator convergence triggers the optimizer followed by a T_optimizer
    dormancy.
    """
    r_prev, u_prev, dl_rel = slot_observation
    state.price_history.append(pool_snapshot.p)
    if len(state.price_history) > config.vol_window:
        del state.price_history[: len(state.price_history) - config.vol_window]

    if state.sleep_remaining > 0:
        state.sleep_remaining -= 1
        return None
    if abs(dl_rel) < config.delta_l:
        state.window.reset()
        state.prev_theta = None
        state.sleep_remaining = config.t_sleep
        return None

    if len(state.price_history) >= 2:
        mu_hat, sigma_hat = estimate_vol(state.price_history)
    else:
        mu_hat, sigma_hat = 0.0, 0.0
    pi = risk_terms(state.c, state.lt, LogNormalStep(mu_hat, sigma_hat))[0]
    x = r_prev * u_prev - u_prev * pi
    state.window.append(x, dl_rel)

    try:
        est = ols_fit(state.window)
    except SingularDesignError:
        return None
    if abs(est.theta1) < 1e-9:
        return None
    r_o_l_hat, eta_l_hat = -est.theta0 / est.theta1, est.theta1

    if not math.isfinite(controller_output):
        return None
    try:
        r_o_b_hat = invert_for_r_ob(
            controller_output, state.c, mu_hat, sigma_hat, config.alpha
        )
    except (ValueError, RiskDomainError):
        return None
    state.estimate = MarketEstimate(
        r_o_l_hat=r_o_l_hat,
        r_o_b_hat=r_o_b_hat,
        eta_l_hat=eta_l_hat,
        mu_hat=mu_hat,
        sigma_hat=sigma_hat,
    )

    theta = (est.theta0, est.theta1)
    fire = (
        state.prev_theta is not None
        and math.hypot(
            theta[0] - state.prev_theta[0], theta[1] - state.prev_theta[1]
        )
        < config.delta_theta
    )
    state.prev_theta = theta
    if not fire:
        return None

    try:
        c_new = optimize_collateral(state.estimate, config, config.alpha, rng)
    except PlannerInfeasibleError:
        state.window.reset()
        state.prev_theta = None
        state.sleep_remaining = config.T_optimizer
        return None

    lt_new = None
    candidates = [c_new] + [float(g) for g in _GRID[::-1] if g < c_new]
    for cand in candidates:
        try:
            lt_new = choose_liquidation_threshold(
                cand, state.estimate.mu_hat, state.estimate.sigma_hat,
                config.eps_liq, config.li,
            )
            c_new = cand
            break
        except PlannerInfeasibleError:
            continue
    if lt_new is None:
        state.window.reset()
        state.prev_theta = None
        state.sleep_remaining = config.T_optimizer
        return None

    state.c, state.lt = c_new, lt_new
    state.fires += 1
    state.window.reset()
    state.prev_theta = None
    state.sleep_remaining = config.T_optimizer
    return c_new, lt_new
