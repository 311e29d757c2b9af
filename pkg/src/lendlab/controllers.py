"""Interest-rate policies: recursive least-squares control, a trimmed-residual
robust variant, and the piecewise-linear utilization curve baseline.

The adaptive controller treats the borrower population's aggregate response
as a noisy linear read-out of the rate gap,

    dB_rel = eta_b * (r* - r) + eps  =  theta0 + theta1 * r + eps,

so a two-parameter regression on (1, r) -> dB_rel recovers theta = (eta_b r*,
-eta_b) and hence the equilibrium rate r* = -theta0/theta1.  The control loop
(``lse_step``) sleeps while the market is quiet, refits on each active slot,
deploys the clamped estimate, and explores a uniformly random rate with
probability nu (always, when the window cannot identify a line yet).

The robust variant (``torrent_gd_fit``) runs gradient descent on the k
smallest-|residual| samples, re-selected every iteration, which discards up
to n - k adversarially corrupted responses as they drift away from the
consensus line.

The baseline (``baseline_rate``) is the classic two-segment utilization
curve.  Because it couples the rate to utilization instead of to the
population response, its noiseless closed loop has a known geometric
trajectory (``baseline_reduced_trajectory`` / ``baseline_rate_expectation``)
that generally stabilizes away from r* — the motivating defect the adaptive
controller removes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SINGULARITY_FLOOR",
    "SingularDesignError",
    "RegressionWindow",
    "ThetaEstimate",
    "LseControllerConfig",
    "LseControllerState",
    "BaselineCurve",
    "ols_fit",
    "lse_step",
    "torrent_gd_fit",
    "baseline_rate",
    "baseline_reduced_trajectory",
    "baseline_rate_expectation",
]

SINGULARITY_FLOOR = 1e-9


class SingularDesignError(RuntimeError):
    """The regression window cannot identify a line (needs exploration)."""


@dataclass
class RegressionWindow:
    """Sliding window of (rate, relative-debt-response) samples, capacity W."""

    capacity: int
    rates: list[float] = field(default_factory=list)
    responses: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.capacity < 2:
            raise ValueError(f"window capacity must be >= 2, got {self.capacity}")
        if len(self.rates) != len(self.responses):
            raise ValueError("rates and responses must have equal length")

    def __len__(self) -> int:
        return len(self.rates)

    def append(self, rate: float, response: float) -> None:
        if not (math.isfinite(rate) and math.isfinite(response)):
            raise ValueError("regression samples must be finite")
        self.rates.append(rate)
        self.responses.append(response)
        if len(self.rates) > self.capacity:
            del self.rates[0]
            del self.responses[0]

    def reset(self) -> None:
        self.rates.clear()
        self.responses.clear()

    def design(self) -> tuple[np.ndarray, np.ndarray]:
        """Design matrix P = [1, r] and response vector."""
        n = len(self.rates)
        P = np.empty((n, 2))
        P[:, 0] = 1.0
        P[:, 1] = self.rates
        return P, np.asarray(self.responses, dtype=float)


@dataclass(frozen=True)
class ThetaEstimate:
    """Fitted (theta0, theta1) = (eta_b * r*, -eta_b) with derived read-outs."""

    theta0: float
    theta1: float
    converged: bool = True
    iterations: int = 0

    @property
    def eta_hat(self) -> float:
        return -self.theta1

    @property
    def r_hat_star(self) -> float:
        """-theta0/theta1; NaN below the singularity floor."""
        if abs(self.theta1) < SINGULARITY_FLOOR:
            return math.nan
        return -self.theta0 / self.theta1


@dataclass(frozen=True)
class LseControllerConfig:
    """Knobs of the regression controller."""

    r_min: float
    r_max: float
    delta: float = 1e-3
    t_sleep: int = 50
    nu: float = 0.1
    W: int = 50

    def __post_init__(self) -> None:
        if not self.r_min < self.r_max:
            raise ValueError("need r_min < r_max")
        if not 0.0 < self.nu < 1.0:
            raise ValueError(f"nu must lie in (0,1), got {self.nu}")
        if self.delta <= 0.0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if self.t_sleep < 0:
            raise ValueError("t_sleep must be >= 0")


@dataclass
class LseControllerState:
    """Mutable loop state: the window, the deployed rate, dormancy, last fit."""

    window: RegressionWindow
    rate: float
    sleep_remaining: int = 0
    last_estimate: ThetaEstimate | None = None
    last_raw_rate: float = math.nan  # unclamped estimate, kept observable


@dataclass(frozen=True)
class BaselineCurve:
    """Two-segment utilization curve with a kink at u_opt."""

    R0: float
    R_slope1: float
    R_slope2: float
    u_opt: float

    def __post_init__(self) -> None:
        if not 0.0 < self.u_opt < 1.0:
            raise ValueError(f"u_opt must lie in (0,1), got {self.u_opt}")
        if not self.R_slope2 >= self.R_slope1 >= 0.0:
            raise ValueError("need R_slope2 >= R_slope1 >= 0")


def ols_fit(window: RegressionWindow) -> ThetaEstimate:
    """Least-squares fit of response = theta0 + theta1 * rate.

    Solves the 2x2 normal equations; raises ``SingularDesignError`` when the
    window has fewer than two samples or no rate spread to identify a slope.
    """
    n = len(window)
    if n < 2:
        raise SingularDesignError(f"need >= 2 samples, have {n}")
    P, y = window.design()
    gram = P.T @ P
    det = gram[0, 0] * gram[1, 1] - gram[0, 1] * gram[1, 0]
    if det <= 1e-12 * max(1.0, gram[0, 0] * gram[1, 1]):
        raise SingularDesignError("all rates in the window are identical")
    theta = np.linalg.solve(gram, P.T @ y)
    return ThetaEstimate(theta0=float(theta[0]), theta1=float(theta[1]))


def lse_step(
    state: LseControllerState,
    observation: tuple[float, float],
    config: LseControllerConfig,
    rng: np.random.Generator,
    *,
    fit=None,
    tainted: bool = False,
) -> tuple[float, str]:
    """One control decision given last slot's (deployed rate, dB_rel).

    Quiet markets (|dB_rel| < delta) reset the window and start a dormancy of
    ``t_sleep`` further slots with the rate held; active slots append the
    observation, refit, and deploy the clamped estimate — or, with
    probability nu (and always on an unidentifiable window), a uniform
    exploration draw from [r_min, r_max].

    ``fit`` swaps the window fitter (default least squares) for a robust one;
    ``tainted`` marks the observation as known-adversarial, keeping it out of
    the window while the decision logic runs unchanged.
    """
    r_prev, db_rel = observation
    if state.sleep_remaining > 0:
        state.sleep_remaining -= 1
        return state.rate, "sleeping"
    if abs(db_rel) < config.delta:
        state.window.reset()
        state.sleep_remaining = config.t_sleep
        return state.rate, "sleeping"

    if not tainted:
        state.window.append(r_prev, db_rel)
    fitter = fit if fit is not None else ols_fit
    try:
        estimate = fitter(state.window)
        singular = abs(estimate.theta1) < SINGULARITY_FLOOR
    except SingularDesignError:
        estimate = None
        singular = True
    state.last_estimate = estimate

    if singular:
        state.rate = rng.uniform(config.r_min, config.r_max)
        state.last_raw_rate = math.nan
        return state.rate, "exploring"

    if rng.uniform() < config.nu:
        state.rate = rng.uniform(config.r_min, config.r_max)
        state.last_raw_rate = estimate.r_hat_star
        return state.rate, "exploring"

    raw = estimate.r_hat_star
    state.last_raw_rate = raw
    state.rate = min(config.r_max, max(config.r_min, raw))
    return state.rate, "learning"


def _lambda_max(gram: np.ndarray, iters: int = 200) -> float:
    """Largest eigenvalue of a symmetric PSD 2x2 via power iteration."""
    v = np.array([1.0, 1.0]) / math.sqrt(2.0)
    for _ in range(iters):
        w = gram @ v
        norm = math.hypot(w[0], w[1])
        if norm == 0.0:
            return 0.0
        v = w / norm
    return float(v @ gram @ v)


def torrent_gd_fit(
    window: RegressionWindow,
    k: int,
    kappa: float | None = None,
    max_iters: int = 10_000,
    tol: float = 1e-12,
) -> ThetaEstimate:
    """Trimmed-residual gradient-descent fit, robust to < 50% corruption.

    Each iteration keeps the active set S of the k smallest-|residual|
    samples and steps down the gradient of the squared loss restricted to S:

        theta <- theta - kappa * P_S^T (P_S theta - y_S)

    ``kappa`` defaults to 1.8 / lambda_max(P^T P) computed on the *centered*
    design (see below): every subset Gram is dominated by the full Gram, so
    any step below 2 / lambda_max stays contractive on every active set.
    ``k == n`` takes the direct least-squares path.  A run that exhausts
    ``max_iters`` returns its last iterate with ``converged=False``.

    Two numerical choices matter in a feedback loop:

    * Iterates run in centered, scaled rate coordinates.  The raw design
      [1, r] has an ill-conditioned Gram whenever rates cluster far from
      zero, which throttles gradient descent to a crawl; centering makes the
      Gram nearly diagonal.  Residuals — and therefore the trimmed active
      sets — are invariant under the exact reparameterization, and the fit
      maps back to raw coordinates on return.

    * Iterates start at the full least-squares fit rather than zero.  The
      trimmed objective is non-convex and the start picks the basin: ranking
      the first active set against a line that has already seen every sample
      keeps the handful of high-leverage points a feedback loop provides,
      whereas a zero start ranks by raw |response| and can trim exactly
      those points away, leaving GD stuck on a rate cluster that cannot
      identify a slope.  A singular full design raises
      ``SingularDesignError`` — no trimmed subset of it can identify the
      slope either.
    """
    n = len(window)
    if not n // 2 < k <= n:
        raise ValueError(f"k must lie in (n/2, n], got k={k}, n={n}")
    if k == n:
        return ols_fit(window)
    init = ols_fit(window)  # raises SingularDesignError on a flat window
    P, y = window.design()
    r_bar = float(np.mean(P[:, 1]))
    scale = float(np.std(P[:, 1]))
    Pc = np.column_stack([P[:, 0], (P[:, 1] - r_bar) / scale])
    if kappa is None:
        kappa = 1.8 / _lambda_max(Pc.T @ Pc)
    # theta_c parameterizes y = theta_c0 + theta_c1 * (r - r_bar) / scale
    theta_c = np.array(
        [init.theta0 + init.theta1 * r_bar, init.theta1 * scale]
    )
    converged, iterations = False, max_iters
    for it in range(1, max_iters + 1):
        residuals = Pc @ theta_c - y
        keep = np.argsort(np.abs(residuals), kind="stable")[:k]
        P_s, y_s = Pc[keep], y[keep]
        grad = P_s.T @ (P_s @ theta_c - y_s)
        step = kappa * grad
        theta_c = theta_c - step
        if math.hypot(step[0], step[1]) < tol:
            converged, iterations = True, it
            break
    theta1 = theta_c[1] / scale
    theta0 = theta_c[0] - theta1 * r_bar
    return ThetaEstimate(float(theta0), float(theta1), converged, iterations)


def baseline_rate(u: float, curve: BaselineCurve) -> float:
    """Two-segment utilization curve, continuous at the kink."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"utilization must lie in [0,1], got {u}")
    if u <= curve.u_opt:
        return curve.R0 + (u / curve.u_opt) * curve.R_slope1
    return curve.R0 + curve.R_slope1 + (
        (u - curve.u_opt) / (1.0 - curve.u_opt)
    ) * curve.R_slope2


def baseline_reduced_trajectory(
    r_star: float,
    eta_b: float,
    R0: float,
    R_slope: float,
    B0: float,
    n_slots: int,
) -> np.ndarray:
    """Noiseless reduced closed loop of the baseline: r_t for t = 0..n_slots-1.

    Debt responds to the rate gap and the rate reads linearly off debt:

        B_{t+1} = B_t + eta_b * (r* - r_t),    r_t = R0 + R_slope * B_t.
    """
    r = np.empty(n_slots)
    B = B0
    for t in range(n_slots):
        r[t] = R0 + R_slope * B
        B = B + eta_b * (r_star - r[t])
    return r


def baseline_rate_expectation(
    r_star: float,
    eta_b: float,
    R0: float,
    R_slope: float,
    B0: float,
    t: int,
) -> float:
    """Closed form for the reduced baseline loop's rate at slot t:

        r_t = r* + (1 - eta_b * R_slope)^t * (R_slope * B0 - (r* - R0)).

    For |1 - eta_b * R_slope| < 1 the loop converges — but to r*, only if the
    fixed point of the curve happens to sit there; the geometric term shows
    the persistent bias otherwise.
    """
    return r_star + (1.0 - eta_b * R_slope) ** t * (R_slope * B0 - (r_star - R0))
