import math

import numpy as np
import pytest

from oracles import hoeffding_scan
from perfrisk.bounds import WidthMethod, hoeffding_width, precomputed_width
from perfrisk.env import CreditEnvConfig, CreditEnvironment, analytic_gamma
from perfrisk.errors import DomainError, GuaranteeModeError, InvalidInputError
from perfrisk.prc import (
    BUDGET_EXHAUSTED,
    CONVERGED,
    NO_SOLVE_PLAN,
    SolvePlan,
    joint_solve,
    min_delta_alpha,
    plan_width,
    run_prc,
    run_prc_quantile,
    threshold_update,
    v_objective,
)
from perfrisk.quantile import WeightFn, dkw_epsilon, quantile_risk_of_losses
from perfrisk.risk import RiskSpec, SampleBatch, ThresholdWindow, risk_curve

WINDOW = ThresholdWindow.for_epsilon()
HOEFF = WidthMethod.hoeffding()


class ZeroLossEnv:
    """Every draw is a negative, so all losses vanish."""

    epsilon = 1e-4
    window = WINDOW

    def sample(self, lambda_deploy, n, rng):
        return SampleBatch(rng.random(n), np.zeros(n, dtype=int), np.ones(n), lambda_deploy)


def test_joint_solve_hoeffding_fixture():
    spec = RiskSpec(alpha=0.3, delta_alpha=0.2, delta=0.1, tau=1.0, n=2000)
    plan = joint_solve(spec, WINDOW, HOEFF)
    assert plan.T_tilde == 17
    assert plan.delta_lambda == pytest.approx(0.06182623408147224, abs=1e-12)
    assert (plan.T_tilde, plan.delta_lambda) == pytest.approx(hoeffding_scan(0.2, 1.0, 2000, 0.1, WINDOW.length))
    # T = 16 misses by about 5e-4
    c16 = hoeffding_width(2000, 0.1 / 16)
    gap = WINDOW.length / 16 - (0.2 - 2 * c16) / 2
    assert gap == pytest.approx(0.000475, abs=2e-5)


def test_joint_solve_no_plan():
    spec = RiskSpec(alpha=0.3, delta_alpha=0.05, delta=0.1, tau=1.0, n=2000)
    assert 2 * hoeffding_width(2000, 0.1) == pytest.approx(0.0547, abs=1e-4)
    assert joint_solve(spec, WINDOW, HOEFF) is None
    assert hoeffding_scan(0.05, 1.0, 2000, 0.1, WINDOW.length) is None


def test_joint_solve_huge_slack():
    spec = RiskSpec(alpha=0.3, delta_alpha=100.0, delta=0.1, tau=1.0, n=2000)
    assert joint_solve(spec, WINDOW, HOEFF).T_tilde == 1


@pytest.mark.parametrize("method", [HOEFF, WidthMethod.clt(), WidthMethod.bernstein(), WidthMethod.hoeffding_bentkus()])
@pytest.mark.parametrize("delta_alpha,tau", [(0.082, 0.972), (0.15, 0.5), (0.3, 2.0)])
def test_plan_algebra_and_minimality(method, delta_alpha, tau):
    spec = RiskSpec(alpha=0.3, delta_alpha=delta_alpha, delta=0.1, tau=tau, n=2000)
    plan = joint_solve(spec, WINDOW, method)
    if plan is None:
        return
    assert 2 * tau * plan.delta_lambda == pytest.approx(delta_alpha - 2 * plan.width, abs=1e-9)
    assert plan.delta_lambda >= WINDOW.length / plan.T_tilde
    assert plan.width == precomputed_width(method, 2000, 0.1 / plan.T_tilde, 0.3)
    for T in range(1, plan.T_tilde):
        c = precomputed_width(method, 2000, 0.1 / T, 0.3)
        assert (delta_alpha - 2 * c) / (2 * tau) < WINDOW.length / T


def test_min_delta_alpha_is_the_feasibility_boundary():
    best, T = min_delta_alpha(2000, 0.3, 0.1, 1.0, WINDOW, WidthMethod.clt())
    assert best == pytest.approx(0.08004803554837937, abs=1e-12)
    above = RiskSpec(alpha=0.3, delta_alpha=best * (1 + 1e-9), delta=0.1, tau=1.0, n=2000)
    below = RiskSpec(alpha=0.3, delta_alpha=best * (1 - 1e-6), delta=0.1, tau=1.0, n=2000)
    assert joint_solve(above, WINDOW, WidthMethod.clt()) is not None
    assert joint_solve(below, WINDOW, WidthMethod.clt()) is None


def test_plan_width_band_mode():
    psi = WeightFn.cvar(0.9)
    assert plan_width(WidthMethod.dkw_band(), 1000, 0.01, 0.3, psi) == pytest.approx(10 * dkw_epsilon(1000, 0.01))


def test_v_objective_examples():
    rng = np.random.default_rng(0)
    b = CreditEnvironment().sample(0.6, 300, rng)
    r = risk_curve(b, [0.6])[0]
    assert v_objective(b, 0.6, 0.03, 1.0) == pytest.approx(r + 0.03, abs=1e-15)
    z = SampleBatch(rng.random(10), np.zeros(10, dtype=int), np.ones(10), 0.6)
    assert v_objective(z, 0.5, 0.03, 1.0) == pytest.approx(0.13, abs=1e-12)
    with pytest.raises(DomainError):
        v_objective(z, 0.7, 0.03, 1.0)


def test_v_monotone_on_grid():
    env = CreditEnvironment()
    rng = np.random.default_rng(1)
    for lam in (WINDOW.lambda_safe, 0.8, 0.5):
        b = env.sample(lam, 2000, rng)
        grid = np.linspace(0, lam, 1025)
        v = [v_objective(b, g, 0.03, 0.972) for g in grid]
        assert all(y <= x for x, y in zip(v, v[1:]))


def _plan(width=0.03, dl=0.01):
    return SolvePlan(T_tilde=100, delta_lambda=dl, width=width, delta_alpha=0.1)


def test_update_zero_loss_hits_left_edge():
    spec = RiskSpec(alpha=0.3, delta_alpha=0.1, delta=0.1, tau=0.2, n=50)
    b = ZeroLossEnv().sample(WINDOW.lambda_safe, 50, np.random.default_rng(2))
    assert threshold_update(b, spec, _plan(), WINDOW, 257) == WINDOW.lambda_min


def test_update_returns_previous_when_nothing_qualifies():
    spec = RiskSpec(alpha=0.3, delta_alpha=0.1, delta=0.1, tau=1.0, n=50)
    b = ZeroLossEnv().sample(0.7, 50, np.random.default_rng(2))
    assert threshold_update(b, spec, _plan(width=0.5), WINDOW, 257) == 0.7
    empty = SampleBatch([], [], [], 0.7)
    with pytest.raises(InvalidInputError):
        threshold_update(empty, spec, _plan(), WINDOW, 257)


def test_update_is_conservative_and_nested():
    env = CreditEnvironment()
    rng = np.random.default_rng(3)
    spec = RiskSpec(alpha=0.3, delta_alpha=0.082, delta=0.1, tau=0.972, n=2000)
    plan = _plan(width=0.0337)
    for lam_prev in (WINDOW.lambda_safe, 0.85, 0.78):
        b = env.sample(lam_prev, 2000, rng)
        for g in (65, 257, 1025):
            coarse = threshold_update(b, spec, plan, WINDOW, g)
            fine = threshold_update(b, spec, plan, WINDOW, 2 * g - 1)
            step = (lam_prev - WINDOW.lambda_min) / (g - 1)
            assert fine <= coarse <= fine + step + 1e-12
            if coarse < lam_prev:
                assert v_objective(b, coarse, plan.width, spec.tau) <= spec.alpha


def test_quantile_update_matches_full_scan():
    env = CreditEnvironment(CreditEnvConfig.quantile_default())
    rng = np.random.default_rng(4)
    spec = RiskSpec(alpha=0.25, delta_alpha=0.12, delta=0.1, tau=0.96, n=5000)
    psi = WeightFn.cvar(0.9)
    plan = _plan(width=0.045)
    for lam_prev in (WINDOW.lambda_safe, 0.85):
        b = env.sample(lam_prev, 5000, rng)
        grid = np.linspace(0, lam_prev, 513)
        v = np.array([quantile_risk_of_losses(b.losses(g), psi) + 0.045 + 0.96 * (lam_prev - g) for g in grid])
        assert np.all(np.diff(v) <= 1e-12)
        ok = np.flatnonzero(v <= 0.25)
        expect = float(grid[ok[0]]) if ok.size else lam_prev
        assert threshold_update(b, spec, plan, WINDOW, 513, psi=psi) == expect


def test_no_plan_returns_safe_threshold():
    spec = RiskSpec(alpha=0.3, delta_alpha=0.05, delta=0.1, tau=1.0, n=2000)
    traj = run_prc(CreditEnvironment(), spec, WINDOW, HOEFF, seed=0)
    assert traj.iterates == [WINDOW.lambda_safe]
    assert traj.stop_reason == NO_SOLVE_PLAN and traj.T == 0


def test_zero_loss_env_reaches_lambda_min():
    spec = RiskSpec(alpha=0.3, delta_alpha=0.3, delta=0.1, tau=0.2, n=5000)
    traj = run_prc(ZeroLossEnv(), spec, WINDOW, HOEFF, grid_size=257, seed=0)
    traj.check(WINDOW)
    assert traj.final == WINDOW.lambda_min
    assert traj.T <= math.ceil(WINDOW.length / traj.plan.delta_lambda) + 1
    q = run_prc_quantile(ZeroLossEnv(), spec, WINDOW, WeightFn.cvar(0.9), HOEFF, grid_size=257, seed=0)
    assert q.final == WINDOW.lambda_min


def test_credit_run_structure_and_determinism():
    env = CreditEnvironment()
    tau = 1.5 * analytic_gamma(env.config)
    spec = RiskSpec(alpha=0.3, delta_alpha=0.082, delta=0.1, tau=tau, n=2000)
    a = run_prc(env, spec, seed=123)
    b = run_prc(env, spec, seed=123)
    assert a.iterates == b.iterates and a.to_dict() == b.to_dict()
    a.check(WINDOW)
    assert a.stop_reason == CONVERGED
    it = a.iterates
    assert all(y < x for x, y in zip(it[:-1], it[1:-1]))  # strict decrease before the stop
    for rec in a.per_iteration:
        if rec.lambda_hat < rec.lambda_deploy:
            assert rec.v_value <= spec.alpha + 1e-12


def test_uniform_quantile_mode_reproduces_expected_mode():
    env = CreditEnvironment()
    spec = RiskSpec(alpha=0.3, delta_alpha=0.082, delta=0.1, tau=0.972, n=2000)
    method = WidthMethod.quantile_clt(0.0, 0.432)
    a = run_prc(env, spec, WINDOW, method, grid_size=1025, seed=5)
    b = run_prc_quantile(env, spec, WINDOW, WeightFn.uniform(), method, grid_size=1025, seed=5)
    step = WINDOW.length / 1024
    assert len(a.iterates) == len(b.iterates)
    np.testing.assert_allclose(a.iterates, b.iterates, atol=step)


def test_quantile_run_rejects_var():
    spec = RiskSpec(alpha=0.25, delta_alpha=0.12, delta=0.1, tau=0.96, n=1000)
    with pytest.raises(GuaranteeModeError):
        run_prc_quantile(CreditEnvironment(), spec, psi=WeightFn.var(0.9))


def test_cvar_run_is_monotone():
    cfg = CreditEnvConfig.quantile_default()
    env = CreditEnvironment(cfg)
    psi = WeightFn.cvar(0.9)
    spec = RiskSpec(alpha=0.25, delta_alpha=0.12, delta=0.1, tau=0.96, n=10_000)
    traj = run_prc_quantile(env, spec, psi=psi, method=WidthMethod.quantile_clt(0.9, 0.064), seed=9)
    traj.check(WINDOW)
    assert traj.stop_reason == CONVERGED and traj.T >= 1


def test_budget_exhaustion_is_an_assertion():
    # A plan whose progress step is too small for its budget violates the
    # construction, so the loop must not quietly return.
    from perfrisk import prc

    # tau = 10 limits each move to 0.03, so two rounds cannot cover the window
    spec = RiskSpec(alpha=0.3, delta_alpha=0.3, delta=0.1, tau=10.0, n=100)
    orig = prc.joint_solve
    prc.joint_solve = lambda *a, **k: SolvePlan(T_tilde=2, delta_lambda=0.01, width=0.0, delta_alpha=0.3)
    try:
        with pytest.raises(AssertionError):
            prc.run_prc(ZeroLossEnv(), spec, WINDOW, HOEFF, grid_size=257, seed=0)
    finally:
        prc.joint_solve = orig
    assert BUDGET_EXHAUSTED == "budget_exhausted"
