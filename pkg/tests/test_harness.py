import csv
import json

import numpy as np
import pytest

from perfrisk.bounds import WidthMethod
from perfrisk.env import CreditEnvConfig, CreditEnvironment
from perfrisk.errors import InvalidParameterError
from perfrisk.harness import (
    ExperimentConfig,
    ExperimentReport,
    TrajectoryResult,
    calibrate_one,
    emit_report,
    failure_rate,
    read_report,
    run_experiment,
    run_trajectory,
    trajectory_seeds,
    validation_risk,
)
from perfrisk.prc import NO_SOLVE_PLAN, run_prc
from perfrisk.quantile import WeightFn
from perfrisk.risk import RiskSpec

SAFE = 1.0 + 1e-4


def small_config(**kw):
    spec = kw.pop("spec", RiskSpec(alpha=0.3, delta_alpha=0.082, delta=0.1, tau=0.972, n=1000))
    base = dict(spec=spec, trajectories=3, n_validation=2000, master_seed=11, grid_size=1025)
    base.update(kw)
    return ExperimentConfig(**base)


def test_validation_risk_is_mean_loss():
    env = CreditEnvironment()
    v = validation_risk(env, 0.7, 0.7, 5000, np.random.default_rng(0))
    b = env.sample(0.7, 5000, np.random.default_rng(0))
    assert v == float(np.mean(b.losses(0.7)))
    assert validation_risk(env, SAFE, SAFE, 100, np.random.default_rng(1)) == 0.0
    with pytest.raises(InvalidParameterError):
        validation_risk(env, 0.7, 0.7, 0, np.random.default_rng(0))


def test_single_trajectory_matches_calibration():
    cfg = small_config(trajectories=1)
    report = run_experiment(cfg)
    calib, _ = trajectory_seeds(cfg.master_seed, 0)
    direct = run_prc(CreditEnvironment(cfg.env), cfg.spec, cfg.window, cfg.method, cfg.grid_size, seed=calib)
    assert report.M == 1
    assert report.results[0].iterates == direct.iterates
    assert calibrate_one(cfg, 0).iterates == direct.iterates


def test_rows_per_iteration():
    res = run_trajectory(small_config(), 0)
    assert len(res.risk_self) == len(res.iterates) == len(res.risk_next)
    assert res.risk_next[-1] is None
    assert res.risk_self[0] == 0.0  # lambda_safe
    assert all(x is not None for x in res.risk_next[:-1])


def test_huge_guard_keeps_safe_threshold():
    spec = RiskSpec(alpha=0.3, delta_alpha=0.3, delta=0.1, tau=1000.0, n=1000)
    report = run_experiment(small_config(spec=spec, trajectories=4))
    assert all(r.final == SAFE for r in report.results)
    for kind in ("any_iteration_safety", "transition_safety", "final_safety"):
        assert failure_rate(report, kind) == 0.0


def _hand_report(finals_risk):
    cfg = small_config(trajectories=1)
    results = [
        TrajectoryResult(i, [SAFE, 0.8], "converged", [0.0, r], [0.1, None]) for i, r in enumerate(finals_risk)
    ]
    return ExperimentReport(cfg, results)


def test_failure_rate_counts():
    alpha = 0.3
    rep = _hand_report([0.25, 0.25, 0.25, 0.25])
    assert failure_rate(rep, "any_iteration_safety") == 0.0
    rep = _hand_report([0.25, alpha + 0.1, 0.25, 0.25])
    assert failure_rate(rep, "any_iteration_safety") == 0.25
    assert failure_rate(rep, "final_safety") == 0.25
    rep = _hand_report([0.25, 0.01, 0.25, 0.25])
    assert failure_rate(rep, "tightness") == 0.25
    with pytest.raises(InvalidParameterError):
        failure_rate(rep, "bogus")


def test_summary_matches_recount_from_rows(tmp_path):
    cfg = small_config(trajectories=4)
    report = run_experiment(cfg)
    emit_report(report, tmp_path / "r")
    summary = json.loads((tmp_path / "r.summary.json").read_text())
    alpha, slack = cfg.spec.alpha, cfg.slack
    rows = list(csv.DictReader((tmp_path / "r.rows.csv").open()))
    per = {}
    for row in rows:
        per.setdefault(row["trajectory"], []).append(float(row["risk_self"]))
    recount = sum(any(x > alpha + slack for x in v) for v in per.values())
    assert summary["summary"]["failure_counts"]["any_iteration_safety"] == recount
    assert summary["config"]["master_seed"] == 11


def test_round_trip(tmp_path):
    cfg = small_config(trajectories=3)
    report = run_experiment(cfg)
    emit_report(report, tmp_path / "a")
    back = read_report(tmp_path / "a")
    assert back.config == cfg
    for x, y in zip(back.results, report.results):
        assert x == y
    emit_report(back, tmp_path / "b")
    for suffix in (".rows.csv", ".summary.json"):
        assert (tmp_path / f"a{suffix}").read_bytes() == (tmp_path / f"b{suffix}").read_bytes()


def test_seeded_determinism_bytes(tmp_path):
    cfg = small_config(trajectories=3)
    emit_report(run_experiment(cfg), tmp_path / "x")
    emit_report(run_experiment(cfg, workers=2), tmp_path / "y")
    for suffix in (".rows.csv", ".summary.json"):
        assert (tmp_path / f"x{suffix}").read_bytes() == (tmp_path / f"y{suffix}").read_bytes()


def test_no_plan_emits_single_row(tmp_path):
    spec = RiskSpec(alpha=0.3, delta_alpha=0.01, delta=0.1, tau=1.0, n=1000)
    report = run_experiment(small_config(spec=spec, trajectories=1))
    emit_report(report, tmp_path / "np")
    rows = list(csv.DictReader((tmp_path / "np.rows.csv").open()))
    assert len(rows) == 1
    assert float(rows[0]["lambda_hat"]) == SAFE
    assert rows[0]["stop_reason"] == NO_SOLVE_PLAN and rows[0]["risk_next"] == ""


def test_quantile_experiment_and_config_roundtrip():
    cfg = ExperimentConfig(
        spec=RiskSpec(alpha=0.25, delta_alpha=0.12, delta=0.1, tau=0.96, n=10_000),
        env=CreditEnvConfig.quantile_default(),
        method=WidthMethod.quantile_clt(0.9, 0.064),
        psi=WeightFn.cvar(0.9),
        trajectories=2,
        n_validation=5000,
    )
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    rep = run_experiment(cfg)
    assert rep.M == 2 and all(r.T >= 1 for r in rep.results)


def test_seeds_are_distinct_per_trajectory():
    a = trajectory_seeds(0, 0)[0].generate_state(4)
    b = trajectory_seeds(0, 1)[0].generate_state(4)
    c = trajectory_seeds(1, 0)[0].generate_state(4)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)


def test_config_validation():
    with pytest.raises(InvalidParameterError):
        small_config(trajectories=0)
