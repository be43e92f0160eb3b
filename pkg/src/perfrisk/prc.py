"""Iterative threshold calibration under performative shift.

Starting from the safe threshold, each round samples a batch under the
currently deployed threshold and moves to the smallest threshold whose
objective

    V(lam) = R_hat(lam) + c + tau * (lam_prev - lam)

stays at or below ``alpha``.  The round budget ``T_tilde`` and the minimum
progress ``delta_lambda`` are fixed up front so that the final threshold is
also within ``delta_alpha`` of the target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import DKW_BAND, WidthMethod, precomputed_width
from .errors import DomainError, GuaranteeModeError, InvalidInputError, InvalidParameterError
from .quantile import WeightFn, dkw_epsilon, m_factor, quantile_risk_of_losses
from .risk import DEFAULT_EPSILON, RiskSpec, SampleBatch, ThresholdWindow, empirical_risk, risk_curve

DEFAULT_GRID = 4096
SOLVE_CAP = 10**6

CONVERGED = "converged"
BUDGET_EXHAUSTED = "budget_exhausted"
NO_SOLVE_PLAN = "no_solve_plan"


@dataclass(frozen=True)
class SolvePlan:
    T_tilde: int
    delta_lambda: float
    width: float
    delta_alpha: float

    def to_dict(self) -> dict:
        return {
            "T_tilde": self.T_tilde,
            "delta_lambda": self.delta_lambda,
            "width": self.width,
            "delta_alpha": self.delta_alpha,
        }


@dataclass(frozen=True)
class IterationRecord:
    t: int
    lambda_deploy: float
    lambda_hat: float
    empirical_risk: float
    width: float
    guard: float

    @property
    def v_value(self) -> float:
        return self.empirical_risk + self.width + self.guard


@dataclass
class Trajectory:
    iterates: list[float]
    per_iteration: list[IterationRecord] = field(default_factory=list)
    stop_reason: str = CONVERGED
    plan: SolvePlan | None = None

    @property
    def T(self) -> int:
        return len(self.iterates) - 1

    @property
    def final(self) -> float:
        return self.iterates[-1]

    def check(self, window: ThresholdWindow) -> None:
        """Assert the structural invariants of a finished trajectory."""
        it = self.iterates
        assert it[0] == window.lambda_safe
        assert all(b <= a for a, b in zip(it, it[1:])), "iterates must be non-increasing"
        assert all(window.lambda_min <= x <= window.lambda_safe for x in it)
        if self.plan is not None:
            assert self.T <= self.plan.T_tilde

    def to_dict(self) -> dict:
        return {
            "iterates": list(self.iterates),
            "stop_reason": self.stop_reason,
            "plan": None if self.plan is None else self.plan.to_dict(),
            "per_iteration": [
                {
                    "t": r.t,
                    "lambda_deploy": r.lambda_deploy,
                    "lambda_hat": r.lambda_hat,
                    "empirical_risk": r.empirical_risk,
                    "width": r.width,
                    "guard": r.guard,
                }
                for r in self.per_iteration
            ],
        }


def plan_width(method: WidthMethod, n: int, delta_prime: float, alpha: float, psi: WeightFn | None = None) -> float:
    """Constant width c(n, delta') for a method, including the band-based quantile width.

    The DKW band moves every quantile by at most eps, so for losses in [0, 1]
    the induced risk bounds deviate from the point estimate by at most
    sup(psi) * eps whatever the sample.
    """
    if method.kind == DKW_BAND:
        return m_factor(psi or WeightFn.uniform()) * dkw_epsilon(n, delta_prime)
    return precomputed_width(method, n, delta_prime, alpha)


def joint_solve(
    spec: RiskSpec,
    window: ThresholdWindow,
    method: WidthMethod,
    psi: WeightFn | None = None,
    cap: int = SOLVE_CAP,
) -> SolvePlan | None:
    """Smallest budget T with delta_lambda = (delta_alpha - 2c(n, delta/T)) / (2 tau) >= L / T."""
    for T in range(1, cap + 1):
        c = plan_width(method, spec.n, spec.delta / T, spec.alpha, psi)
        if 2 * c >= spec.delta_alpha:
            # widths only grow with T
            return None
        delta_lambda = (spec.delta_alpha - 2 * c) / (2 * spec.tau)
        if delta_lambda >= window.length / T:
            return SolvePlan(T, delta_lambda, c, spec.delta_alpha)
    return None


def min_delta_alpha(
    n: int,
    alpha: float,
    delta: float,
    tau: float,
    window: ThresholdWindow,
    method: WidthMethod,
    psi: WeightFn | None = None,
    cap: int = SOLVE_CAP,
) -> tuple[float, int]:
    """Tightest slack for which a plan exists, min over T of 2 tau L / T + 2 c(n, delta / T).

    Returns the slack and the budget attaining it.
    """
    best, best_T = math.inf, 0
    for T in range(1, cap + 1):
        c = plan_width(method, n, delta / T, alpha, psi)
        if 2 * c >= best:
            break
        val = 2 * tau * window.length / T + 2 * c
        if val < best:
            best, best_T = val, T
    return best, best_T


def v_objective(batch: SampleBatch, lambda_eval: float, width: float, tau: float, epsilon: float = DEFAULT_EPSILON) -> float:
    if lambda_eval > batch.lambda_deploy:
        raise DomainError(f"lambda_eval {lambda_eval} exceeds deployed threshold {batch.lambda_deploy}")
    return empirical_risk(batch, lambda_eval, epsilon) + width + tau * (batch.lambda_deploy - lambda_eval)


def _grid(window: ThresholdWindow, lam_prev: float, grid_size: int) -> np.ndarray:
    if grid_size < 2:
        raise InvalidParameterError(f"grid_size must be >= 2, got {grid_size}")
    return np.linspace(window.lambda_min, lam_prev, grid_size)


def _select_expected(batch, spec, width, window, grid_size, epsilon):
    lam_prev = batch.lambda_deploy
    grid = _grid(window, lam_prev, grid_size)
    v = risk_curve(batch, grid, epsilon) + width + spec.tau * (lam_prev - grid)
    ok = np.flatnonzero(v <= spec.alpha)
    if ok.size == 0:
        return lam_prev
    return float(grid[ok[0]])


def _select_quantile(batch, spec, width, window, grid_size, epsilon, psi):
    # V is non-increasing in lambda, so bisection over grid indices finds the
    # same smallest qualifying grid point as a full scan.
    lam_prev = batch.lambda_deploy
    grid = _grid(window, lam_prev, grid_size)

    def v_at(i):
        lam = grid[i]
        return quantile_risk_of_losses(batch.losses(lam, epsilon), psi) + width + spec.tau * (lam_prev - lam)

    hi = grid_size - 1
    if v_at(hi) > spec.alpha:
        return lam_prev
    lo = -1  # virtual index where V is taken to exceed alpha
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if v_at(mid) <= spec.alpha:
            hi = mid
        else:
            lo = mid
    return float(grid[hi])


def threshold_update(
    batch: SampleBatch,
    spec: RiskSpec,
    plan: SolvePlan,
    window: ThresholdWindow,
    grid_size: int = DEFAULT_GRID,
    epsilon: float = DEFAULT_EPSILON,
    psi: WeightFn | None = None,
) -> float:
    """Smallest grid point in [lambda_min, lambda_prev] with V <= alpha, else lambda_prev."""
    if len(batch) == 0:
        raise InvalidInputError("threshold update needs a non-empty batch")
    if psi is None:
        return _select_expected(batch, spec, plan.width, window, grid_size, epsilon)
    return _select_quantile(batch, spec, plan.width, window, grid_size, epsilon, psi)


def _risk(batch, lam, epsilon, psi):
    if psi is None:
        return empirical_risk(batch, lam, epsilon)
    return quantile_risk_of_losses(batch.losses(lam, epsilon), psi)


def _calibrate(env, spec, window, method, grid_size, seed, psi):
    window = window or env.window
    epsilon = env.epsilon
    plan = joint_solve(spec, window, method, psi)
    if plan is None:
        return Trajectory([window.lambda_safe], stop_reason=NO_SOLVE_PLAN)
    rng = np.random.default_rng(seed)
    traj = Trajectory([window.lambda_safe], plan=plan)
    lam_prev = window.lambda_safe
    for t in range(1, plan.T_tilde + 1):
        batch = env.sample(lam_prev, spec.n, rng)
        lam = threshold_update(batch, spec, plan, window, grid_size, epsilon, psi)
        traj.iterates.append(lam)
        traj.per_iteration.append(
            IterationRecord(
                t=t,
                lambda_deploy=lam_prev,
                lambda_hat=lam,
                empirical_risk=_risk(batch, lam, epsilon, psi),
                width=plan.width,
                guard=spec.tau * (lam_prev - lam),
            )
        )
        if lam >= lam_prev - plan.delta_lambda:
            traj.stop_reason = CONVERGED
            return traj
        lam_prev = lam
    # Each continuing round moves by more than delta_lambda >= L / T_tilde.
    raise AssertionError("iteration budget exhausted despite a feasible plan")


def run_prc(
    env,
    spec: RiskSpec,
    window: ThresholdWindow | None = None,
    method: WidthMethod | None = None,
    grid_size: int = DEFAULT_GRID,
    seed=None,
) -> Trajectory:
    """Expected-risk calibration.

    ``env`` must provide ``sample(lambda_deploy, n, rng) -> SampleBatch``,
    ``epsilon`` and ``window``.  ``seed`` is anything accepted by
    ``numpy.random.default_rng``.
    """
    return _calibrate(env, spec, window, method or WidthMethod.clt(), grid_size, seed, None)


def run_prc_quantile(
    env,
    spec: RiskSpec,
    window: ThresholdWindow | None = None,
    psi: WeightFn | None = None,
    method: WidthMethod | None = None,
    grid_size: int = DEFAULT_GRID,
    seed=None,
) -> Trajectory:
    """Calibration of a weighted-quantile risk (CVaR by default, beta = 0.9).

    The guard ``tau`` must dominate gamma * m_factor(psi); that is the caller's
    responsibility, since gamma is a property of the unknown environment.
    """
    psi = psi or WeightFn.cvar(0.9)
    if not psi.has_density:
        raise GuaranteeModeError("VaR has no density and cannot be calibrated with a guarantee; use CVaR")
    if method is None:
        method = WidthMethod.dkw_band()
    return _calibrate(env, spec, window, method, grid_size, seed, psi)
