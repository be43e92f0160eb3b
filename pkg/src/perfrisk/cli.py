"""Command-line entry point: ``perfrisk {solve,bounds,calibrate,experiment,gamma}``.

Configuration comes from an optional JSON file (``--config``); scalar flags
override file values, which override built-in defaults.  Exit codes: 0 on
success, 1 on usage or configuration errors, 2 when no solve plan exists.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import bounds
from .env import CreditEnvironment, CreditEnvConfig, analytic_gamma, estimate_gamma, load_scores_csv
from .errors import ConfigError, GuaranteeModeError
from .harness import ExperimentConfig, calibrate_one, emit_report, run_experiment
from .prc import NO_SOLVE_PLAN, joint_solve

DEFAULTS = {
    "spec": {"alpha": 0.3, "delta_alpha": 0.082, "delta": 0.1, "tau": 1.0, "n": 2000},
    "env": CreditEnvConfig().to_dict(),
    "method": {"kind": "clt"},
    "psi": None,
    "trajectories": 100,
    "n_validation": 20000,
    "master_seed": 0,
    "grid_size": 4096,
    "bounds": {"n": 2000, "T_tilde": 100, "delta": 0.1, "alphas": [round(0.01 * k, 2) for k in range(1, 51)]},
    "gamma": {"bins": 20, "n_samples": 100000, "csv": None},
}

_NUM = {"type": "number"}
_INT = {"type": "integer"}
_PAIR = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "additionalProperties": False, "required": list(required)}


SCHEMA = _obj(
    {
        "spec": _obj({"alpha": _NUM, "delta_alpha": _NUM, "delta": _NUM, "tau": _NUM, "n": _INT}),
        "env": _obj(
            {
                "p_pos": _NUM,
                "pos_score": _PAIR,
                "neg_score": _PAIR,
                "shift_s": _NUM,
                "epsilon": _NUM,
                "cost_model": {"enum": ["off", "uniform"]},
            }
        ),
        "window": _obj({"lambda_min": _NUM, "lambda_safe": {"type": ["number", "null"]}}),
        "method": {
            "oneOf": [
                {"enum": list(bounds._KINDS)},
                _obj({"kind": {"enum": list(bounds._KINDS)}, "beta": _NUM, "p_rate": _NUM}, required=["kind"]),
            ]
        },
        "psi": {
            "oneOf": [
                {"type": "null"},
                {"enum": ["uniform"]},
                _obj(
                    {
                        "kind": {"enum": ["uniform", "cvar", "var", "piecewise"]},
                        "beta": _NUM,
                        "breakpoints": {"type": "array", "items": _NUM},
                        "weights": {"type": "array", "items": _NUM},
                    },
                    required=["kind"],
                ),
            ]
        },
        "trajectories": _INT,
        "n_validation": _INT,
        "master_seed": _INT,
        "grid_size": _INT,
        "bounds": _obj({"n": _INT, "T_tilde": _INT, "delta": _NUM, "alphas": {"type": "array", "items": _NUM}}),
        "gamma": _obj({"bins": _INT, "n_samples": _INT, "csv": {"type": ["string", "null"]}}),
    }
)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path) -> dict:
    """Parse and validate a JSON config file; raises ConfigError with the offending location."""
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    validate_config(doc)
    return doc


def validate_config(doc) -> None:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(f"config error at {e.json_path}: {e.message}")


def _resolve(args) -> dict:
    doc = load_config(args.config) if args.config else {}
    cfg = _merge(DEFAULTS, doc)
    spec_flags = {"alpha": "alpha", "delta": "delta", "delta_alpha": "delta_alpha", "tau": "tau", "n": "n"}
    for flag, key in spec_flags.items():
        v = getattr(args, flag, None)
        if v is not None:
            cfg["spec"][key] = v
    if isinstance(cfg["method"], str):
        cfg["method"] = {"kind": cfg["method"]}
    if args.method is not None:
        cfg["method"] = {"kind": args.method}
    if args.beta is not None:
        cfg["method"]["beta"] = args.beta
        if isinstance(cfg["psi"], dict) and cfg["psi"].get("kind") in ("cvar", "var"):
            cfg["psi"]["beta"] = args.beta
    if args.p_rate is not None:
        cfg["method"]["p_rate"] = args.p_rate
    if args.seed is not None:
        cfg["master_seed"] = args.seed
    if args.grid is not None:
        cfg["grid_size"] = args.grid
    if getattr(args, "trajectories", None) is not None:
        cfg["trajectories"] = args.trajectories
    validate_config(cfg)
    return cfg


def _experiment_config(cfg: dict) -> ExperimentConfig:
    keys = ("spec", "env", "window", "method", "psi", "trajectories", "n_validation", "master_seed", "grid_size")
    return ExperimentConfig.from_dict({k: cfg[k] for k in keys if k in cfg})


def cmd_solve(cfg: dict, out=sys.stdout) -> int:
    ec = _experiment_config(cfg)
    plan = joint_solve(ec.spec, ec.window, ec.method, ec.psi)
    if plan is None:
        print("no plan", file=out)
        return 2
    print(json.dumps(plan.to_dict()), file=out)
    return 0


BOUND_METHODS = ("hoeffding", "bernstein", "hb", "clt")


def bounds_table(n: int, T_tilde: int, delta: float, alphas) -> list[tuple[float, str, float]]:
    delta_prime = delta / T_tilde
    rows = []
    for alpha in alphas:
        for kind in BOUND_METHODS:
            c = bounds.precomputed_width(bounds.WidthMethod(kind), n, delta_prime, alpha)
            rows.append((alpha, kind, 2 * c))
    return rows


def cmd_bounds(cfg: dict, out=sys.stdout) -> int:
    b = cfg["bounds"]
    print("alpha,method,two_c", file=out)
    for alpha, kind, two_c in bounds_table(b["n"], b["T_tilde"], b["delta"], b["alphas"]):
        print(f"{alpha!r},{kind},{two_c:.6f}", file=out)
    return 0


def cmd_calibrate(cfg: dict, out=sys.stdout, stem=None) -> int:
    ec = _experiment_config(cfg)
    traj = calibrate_one(ec, 0)
    doc = {"config": ec.to_dict(), "trajectory": traj.to_dict()}
    text = json.dumps(doc, indent=2, sort_keys=True)
    print(text, file=out)
    if stem is not None:
        path = Path(str(stem) + ".trajectory.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text + "\n")
    return 2 if traj.stop_reason == NO_SOLVE_PLAN else 0


def cmd_experiment(cfg: dict, out=sys.stdout, stem="experiment", workers=None) -> int:
    ec = _experiment_config(cfg)
    report = run_experiment(ec, workers=workers)
    paths = emit_report(report, stem)
    doc = {"config": ec.to_dict(), "summary": report.summary(), "written": [str(p) for p in paths]}
    print(json.dumps(doc, indent=2, sort_keys=True), file=out)
    return 0


def cmd_gamma(cfg: dict, out=sys.stdout, csv_path=None) -> int:
    g = cfg["gamma"]
    csv_path = csv_path or g.get("csv")
    bins = g["bins"]
    if csv_path:
        scores, labels = load_scores_csv(csv_path)
        p = float(labels.mean())
        pos = scores[labels == 1]
        est = estimate_gamma(pos, p, bins)
        doc = {"source": str(csv_path), "n": int(scores.size), **est.__dict__}
    else:
        env_cfg = CreditEnvConfig.from_dict(cfg["env"])
        rng = np.random.default_rng(cfg["master_seed"])
        scores, labels, _ = CreditEnvironment(env_cfg).base_draw(g["n_samples"], rng)
        est = estimate_gamma(scores[labels == 1], env_cfg.p_pos, bins)
        doc = {"source": "synthetic", "analytic_gamma": analytic_gamma(env_cfg), **est.__dict__}
    print(json.dumps(doc, indent=2), file=out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output path stem")
    common.add_argument("--threads", type=int, help="worker processes for experiments")
    common.add_argument("--grid", type=int, help="threshold grid size")
    common.add_argument("--alpha", type=float)
    common.add_argument("--delta", type=float)
    common.add_argument("--delta-alpha", dest="delta_alpha", type=float)
    common.add_argument("--tau", type=float)
    common.add_argument("--n", type=int)
    common.add_argument("--method", choices=bounds._KINDS)
    common.add_argument("--beta", type=float)
    common.add_argument("--p-rate", dest="p_rate", type=float)

    parser = argparse.ArgumentParser(prog="perfrisk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve for the iteration budget and progress step")
    sub.add_parser("bounds", parents=[common], help="print 2c(n, delta/T) per method over an alpha grid")
    sub.add_parser("calibrate", parents=[common], help="run one calibration trajectory")
    exp = sub.add_parser("experiment", parents=[common], help="Monte Carlo validation of many trajectories")
    exp.add_argument("--trajectories", type=int)
    gam = sub.add_parser("gamma", parents=[common], help="estimate the sensitivity gamma = p * C")
    gam.add_argument("--csv", help="score,label CSV to estimate from")
    return parser


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        cfg = _resolve(args)
        if args.command == "solve":
            return cmd_solve(cfg, out)
        if args.command == "bounds":
            return cmd_bounds(cfg, out)
        if args.command == "calibrate":
            return cmd_calibrate(cfg, out, args.out)
        if args.command == "experiment":
            workers = args.threads or os.cpu_count() or 1
            return cmd_experiment(cfg, out, args.out or "experiment", workers)
        return cmd_gamma(cfg, out, args.csv)
    except GuaranteeModeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
