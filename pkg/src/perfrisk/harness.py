"""Monte Carlo validation of calibrated trajectories.

Each trajectory gets its own seed, derived from the master seed and the
trajectory index, so results do not depend on execution order or worker
count.  Every iterate is scored on a fresh validation batch drawn under that
iterate, evaluated both at itself and at the next iterate.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bounds import WidthMethod
from .env import CreditEnvConfig, CreditEnvironment
from .errors import InvalidParameterError
from .prc import DEFAULT_GRID, Trajectory, run_prc, run_prc_quantile
from .quantile import WeightFn, quantile_risk_of_losses
from .risk import RiskSpec, ThresholdWindow

FAILURE_KINDS = ("any_iteration_safety", "transition_safety", "final_safety", "tightness")
ROW_FIELDS = ("trajectory", "iteration", "lambda_hat", "risk_self", "risk_next", "stop_reason")


@dataclass(frozen=True)
class ExperimentConfig:
    spec: RiskSpec
    env: CreditEnvConfig = field(default_factory=CreditEnvConfig)
    window: ThresholdWindow | None = None
    method: WidthMethod = field(default_factory=WidthMethod.clt)
    psi: WeightFn | None = None
    trajectories: int = 100
    n_validation: int = 20_000
    master_seed: int = 0
    grid_size: int = DEFAULT_GRID

    def __post_init__(self):
        if self.trajectories < 1:
            raise InvalidParameterError("trajectories must be >= 1")
        if self.n_validation < 100:
            raise InvalidParameterError("n_validation must be >= 100")
        if self.window is None:
            object.__setattr__(self, "window", ThresholdWindow.for_epsilon(self.env.epsilon))

    @property
    def slack(self) -> float:
        """Three-sigma allowance for validation noise at the target level."""
        a = self.spec.alpha
        return 3.0 * math.sqrt(a * (1.0 - a) / self.n_validation)

    def to_dict(self) -> dict:
        s = self.spec
        return {
            "spec": {"alpha": s.alpha, "delta_alpha": s.delta_alpha, "delta": s.delta, "tau": s.tau, "n": s.n},
            "env": self.env.to_dict(),
            "window": {"lambda_min": self.window.lambda_min, "lambda_safe": self.window.lambda_safe},
            "method": self.method.to_dict(),
            "psi": None if self.psi is None else self.psi.to_dict(),
            "trajectories": self.trajectories,
            "n_validation": self.n_validation,
            "master_seed": self.master_seed,
            "grid_size": self.grid_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        env = CreditEnvConfig.from_dict(d.get("env", {}))
        window = d.get("window")
        if window is not None:
            lam_safe = window.get("lambda_safe")
            window = ThresholdWindow(
                window.get("lambda_min", 0.0),
                1.0 + env.epsilon if lam_safe is None else lam_safe,
            )
        psi = d.get("psi")
        kwargs = {k: d[k] for k in ("trajectories", "n_validation", "master_seed", "grid_size") if k in d}
        return cls(
            spec=RiskSpec(**d["spec"]),
            env=env,
            window=window,
            method=WidthMethod.from_dict(d.get("method", "clt")),
            psi=None if psi is None else WeightFn.from_dict(psi),
            **kwargs,
        )


@dataclass
class TrajectoryResult:
    index: int
    iterates: list[float]
    stop_reason: str
    risk_self: list[float]
    risk_next: list[float | None]

    @property
    def T(self) -> int:
        return len(self.iterates) - 1

    @property
    def final(self) -> float:
        return self.iterates[-1]


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    results: list[TrajectoryResult]

    @property
    def M(self) -> int:
        return len(self.results)

    def failures(self, kind: str) -> list[bool]:
        if kind not in FAILURE_KINDS:
            raise InvalidParameterError(f"unknown failure kind {kind!r}; expected one of {FAILURE_KINDS}")
        alpha = self.config.spec.alpha
        slack = self.config.slack
        low = alpha - self.config.spec.delta_alpha - slack
        out = []
        for r in self.results:
            if kind == "any_iteration_safety":
                bad = any(x > alpha + slack for x in r.risk_self)
            elif kind == "transition_safety":
                bad = any(x is not None and x > alpha + slack for x in r.risk_next)
            elif kind == "final_safety":
                bad = r.risk_self[-1] > alpha + slack
            else:
                bad = r.T >= 1 and r.risk_self[-1] < low
            out.append(bad)
        return out

    def summary(self) -> dict:
        finals = np.array([r.final for r in self.results])
        counts = {k: int(sum(self.failures(k))) for k in FAILURE_KINDS}
        return {
            "M": self.M,
            "slack": self.config.slack,
            "failure_counts": counts,
            "with_iterations": sum(r.T >= 1 for r in self.results),
            "final_lambda": {
                "mean": float(finals.mean()),
                "p05": float(np.percentile(finals, 5)),
                "p50": float(np.percentile(finals, 50)),
                "p95": float(np.percentile(finals, 95)),
            },
            "mean_T": float(np.mean([r.T for r in self.results])),
        }


def failure_rate(report: ExperimentReport, kind: str) -> float:
    if report.M == 0:
        raise InvalidParameterError("empty report")
    return sum(report.failures(kind)) / report.M


def trajectory_seeds(master_seed: int, index: int) -> tuple[np.random.SeedSequence, np.random.SeedSequence]:
    """(calibration, validation) seed sequences for one trajectory."""
    root = np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))
    calib, valid = root.spawn(2)
    return calib, valid


def _risk_of(batch, lam, epsilon, psi):
    losses = batch.losses(lam, epsilon)
    return float(np.mean(losses)) if psi is None else quantile_risk_of_losses(losses, psi)


def validation_risk(env, lambda_distribution, lambda_eval, n_v, rng, psi=None) -> float:
    """Risk at ``lambda_eval`` on a fresh batch drawn under ``lambda_distribution``."""
    if n_v < 1:
        raise InvalidParameterError("n_v must be >= 1")
    batch = env.sample(lambda_distribution, n_v, rng)
    return _risk_of(batch, lambda_eval, env.epsilon, psi)


def calibrate_one(config: ExperimentConfig, index: int = 0, env=None) -> Trajectory:
    env = env or CreditEnvironment(config.env)
    calib, _ = trajectory_seeds(config.master_seed, index)
    if config.psi is None:
        return run_prc(env, config.spec, config.window, config.method, config.grid_size, seed=calib)
    return run_prc_quantile(env, config.spec, config.window, config.psi, config.method, config.grid_size, seed=calib)


def run_trajectory(config: ExperimentConfig, index: int, env=None) -> TrajectoryResult:
    env = env or CreditEnvironment(config.env)
    traj = calibrate_one(config, index, env)
    traj.check(config.window)
    _, valid = trajectory_seeds(config.master_seed, index)
    rng = np.random.default_rng(valid)
    risk_self, risk_next = [], []
    it = traj.iterates
    for t, lam in enumerate(it):
        batch = env.sample(lam, config.n_validation, rng)
        risk_self.append(_risk_of(batch, lam, env.epsilon, config.psi))
        nxt = it[t + 1] if t + 1 < len(it) else None
        risk_next.append(None if nxt is None else _risk_of(batch, nxt, env.epsilon, config.psi))
    return TrajectoryResult(index, list(it), traj.stop_reason, risk_self, risk_next)


class ExperimentError(RuntimeError):
    def __init__(self, message, partial: ExperimentReport):
        super().__init__(message)
        self.partial = partial


def run_experiment(config: ExperimentConfig, workers: int | None = 1, env=None) -> ExperimentReport:
    """Run ``config.trajectories`` independent trajectories.

    With ``workers > 1`` trajectories are spread over processes; the report is
    identical to the sequential one.
    """
    results: list[TrajectoryResult] = []
    indices = range(config.trajectories)
    try:
        if workers and workers > 1 and env is None:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for res in pool.map(run_trajectory, [config] * len(indices), indices):
                    results.append(res)
        else:
            for i in indices:
                results.append(run_trajectory(config, i, env))
    except Exception as exc:
        partial = ExperimentReport(config, results)
        raise ExperimentError(
            f"trajectory {len(results)} failed after {len(results)} completed: {exc!r}", partial
        ) from exc
    return ExperimentReport(config, results)


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def emit_report(report: ExperimentReport, stem, fmt: str = "both") -> list[Path]:
    """Write ``<stem>.rows.csv`` and/or ``<stem>.summary.json``; returns paths written."""
    if fmt not in ("csv", "json", "both"):
        raise InvalidParameterError(f"unknown format {fmt!r}")
    stem = Path(stem)
    written = []
    try:
        stem.parent.mkdir(parents=True, exist_ok=True)
        if fmt in ("csv", "both"):
            rows_path = stem.with_name(stem.name + ".rows.csv")
            with rows_path.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(ROW_FIELDS)
                for r in report.results:
                    for t, lam in enumerate(r.iterates):
                        w.writerow([r.index, t, _fmt(lam), _fmt(r.risk_self[t]), _fmt(r.risk_next[t]), r.stop_reason])
            written.append(rows_path)
        if fmt in ("json", "both"):
            summary_path = stem.with_name(stem.name + ".summary.json")
            doc = {"config": report.config.to_dict(), "summary": report.summary()}
            summary_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
            written.append(summary_path)
    except OSError as exc:
        raise OSError(f"could not write report at {stem}: {exc}") from exc
    return written


def read_report(stem) -> ExperimentReport:
    """Inverse of :func:`emit_report` (needs both files)."""
    stem = Path(stem)
    doc = json.loads(stem.with_name(stem.name + ".summary.json").read_text())
    config = ExperimentConfig.from_dict(doc["config"])
    by_index: dict[int, TrajectoryResult] = {}
    with stem.with_name(stem.name + ".rows.csv").open(newline="") as fh:
        for row in csv.DictReader(fh):
            i = int(row["trajectory"])
            res = by_index.setdefault(i, TrajectoryResult(i, [], row["stop_reason"], [], []))
            res.iterates.append(float(row["lambda_hat"]))
            res.risk_self.append(float(row["risk_self"]))
            res.risk_next.append(None if row["risk_next"] == "" else float(row["risk_next"]))
    return ExperimentReport(config, [by_index[i] for i in sorted(by_index)])
