"""Command-line front end.

    nlmv <task> --config <path> [--seed U64] [--paths N] [--out DIR] [--threads N]

Tasks: validate, feasibility, riccati, frontier, simulate, duality-check.
Each run writes ``<task>.json`` (plus CSVs for tabular outputs) into the output
directory. Outputs carry no timestamps, so identical (config, seed) give identical bytes.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .duality import dual_terminal_wealth_check, duality_consistency_check, solve_dual_bsde
from .errors import (ConfigError, InfeasibleModelError, ModelError, NLMVError, NumericalError)
from .frontier import efficient_policy, frontier_csv, frontier_curve, riccati_pair
from .model import MarketModel, TimeGrid, check_feasibility, validate_model
from .policy import simulate_wealth, write_terminal_csv

TASKS = ("validate", "feasibility", "riccati", "frontier", "simulate", "duality-check")

EXIT_OK, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_NUMERICAL, EXIT_SCHEMA = 0, 2, 3, 4, 5

_coef = {"oneOf": [
    {"type": "number"},
    {"type": "object", "required": ["kind"],
     "properties": {"kind": {"enum": ["constant", "piecewise", "factor"]}}},
]}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["model", "grid"],
    "properties": {
        "task": {"enum": list(TASKS)},
        "model": {
            "type": "object",
            "required": ["r", "theta_lower", "theta_upper", "sigma"],
            "properties": {
                "dimension": {"type": "integer", "minimum": 1},
                "r": _coef,
                "theta_lower": {"type": "array", "items": _coef, "minItems": 1},
                "theta_upper": {"type": "array", "items": _coef, "minItems": 1},
                "sigma": {"type": "array", "items": {"type": "array", "items": _coef}},
                "epsilon": {"type": "number", "exclusiveMinimum": 0},
                "factor": {
                    "type": "object",
                    "properties": {k: {"type": "number"} for k in ("kappa", "mean", "vol", "y0")}
                    | {"component": {"type": "integer", "minimum": 0}},
                    "additionalProperties": False,
                },
            },
        },
        "grid": {"type": "object", "required": ["T", "N"],
                 "properties": {"T": {"type": "number", "exclusiveMinimum": 0},
                                "N": {"type": "integer", "minimum": 1}}},
        "numerics": {"type": "object", "properties": {
            "paths": {"type": "integer", "minimum": 1},
            "riccati_paths": {"type": "integer", "minimum": 1},
            "mc_paths": {"type": "integer", "minimum": 0},
            "basis_degree": {"type": "integer", "minimum": 0},
            "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        }},
        "probe_states": {"type": "array", "items": {"type": "number"}},
        "frontier": {"type": "object", "required": ["x0", "K_list"],
                     "properties": {"x0": {"type": "number"},
                                    "K_list": {"type": "array", "items": {"type": "number"},
                                               "minItems": 1}}},
        "simulate": {"type": "object", "required": ["x0", "K"],
                     "properties": {"x0": {"type": "number"}, "K": {"type": "number"},
                                    "terminal_csv": {"type": "boolean"}}},
        "duality": {"type": "object", "required": ["x0", "K"],
                    "properties": {"x0": {"type": "number"}, "K": {"type": "number"}}},
        "outputs": {"type": "object", "properties": {"dir": {"type": "string"}}},
    },
}

TASK_REQUIRES = {"frontier": "frontier", "simulate": "simulate"}


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _hash(obj) -> str:
    return hashlib.sha256(_canonical(obj).encode()).hexdigest()[:16]


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg, task=None):
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config schema error at {list(exc.absolute_path)}: {exc.message}") \
            from exc
    task = task or cfg.get("task")
    need = TASK_REQUIRES.get(task)
    if need and need not in cfg:
        raise ConfigError(f"task {task!r} needs a {need!r} block")
    if task == "duality-check" and len(cfg["model"]["theta_lower"]) != 1:
        raise ConfigError("duality-check supports one-dimensional models only")


def _numerics(cfg):
    num = dict(cfg.get("numerics", {}))
    num.setdefault("seed", 0)
    num.setdefault("paths", 200_000)
    num.setdefault("riccati_paths", 100_000)
    num.setdefault("mc_paths", 20_000)
    num.setdefault("basis_degree", 3)
    return num


def _write(path: Path, text: str):
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


def emit_frontier_csv(points, path):
    """Write the frontier table (12 significant digits, LF endings)."""
    _write(Path(path), frontier_csv(points))


def run(cfg: dict, task: str, out_dir, workers=None):
    """Dispatch one task. Returns (exit code, report dict); writes artifacts into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    num = _numerics(cfg)
    seed = int(num["seed"])
    report = {"task": task, "config_hash": _hash(cfg), "seed": seed,
              "versions": {"nlmv": __version__, "numpy": np.__version__}}
    code = EXIT_OK
    try:
        validate_config(cfg, task)
        model = MarketModel.from_dict(cfg["model"])
        grid = TimeGrid(cfg["grid"]["T"], cfg["grid"]["N"])
        report["model_hash"] = model.hash()
        probes = cfg.get("probe_states")
        validation = validate_model(model, grid, probes)
        if task == "validate" or not validation.valid:
            report["result"] = validation.to_dict()
            if not validation.valid:
                code = EXIT_INVALID
                report["reason"] = "invalid_model"
        elif task == "feasibility":
            res = check_feasibility(model, grid, num["mc_paths"], seed, workers)
            report["result"] = res.to_dict()
            if not res.feasible:
                code = EXIT_INFEASIBLE
                report["reason"] = "infeasible"
        else:
            code = _run_solver_task(task, cfg, num, model, grid, out, report, workers)
    except ConfigError as exc:
        code, report["reason"], report["error"] = EXIT_SCHEMA, exc.reason, str(exc)
    except ModelError as exc:
        code, report["reason"], report["error"] = EXIT_SCHEMA, exc.reason, str(exc)
    except InfeasibleModelError as exc:
        code, report["reason"], report["error"] = EXIT_INFEASIBLE, exc.reason, str(exc)
    except (NumericalError, ArithmeticError) as exc:
        code = EXIT_NUMERICAL
        report["reason"] = getattr(exc, "reason", "numerical_failure")
        report["error"] = str(exc)
    except ValueError as exc:
        code, report["reason"], report["error"] = EXIT_INVALID, "invalid_input", str(exc)
    report["status"] = "ok" if code == EXIT_OK else "error"
    report["exit_code"] = code
    report = _jsonable(report)
    _write(out / f"{task}.json", json.dumps(report, sort_keys=True, indent=2) + "\n")
    return code, report


def _run_solver_task(task, cfg, num, model, grid, out, report, workers):
    seed = num["seed"]
    feas = check_feasibility(model, grid, num["mc_paths"], seed, workers)
    if not feas.feasible:
        raise InfeasibleModelError("feasibility condition fails")
    sols = riccati_pair(model, grid, num["riccati_paths"], num["basis_degree"], seed, workers)
    report["solver"] = {"riccati": sols[0].meta, "P1_0": sols[0].P0, "P2_0": sols[1].P0}

    if task == "riccati":
        for sol in sols:
            _write(out / f"riccati_{sol.which}.json", sol.to_json() + "\n")
        report["result"] = {
            "P1_0": sols[0].P0, "P2_0": sols[1].P0,
            "Lambda1_0": sols[0].Lambda0, "Lambda2_0": sols[1].Lambda0,
            "lower_bound": sols[1].lower,
            "upper_bound_0": float(sols[1].upper[0]),
        }
        return EXIT_OK

    if task == "frontier":
        fr = cfg["frontier"]
        points = frontier_curve(model, grid, fr["x0"], fr["K_list"], solutions=sols, seed=seed)
        emit_frontier_csv(points, out / "frontier.csv")
        report["result"] = {"points": [{"K": p.K, "d_star": p.d_star, "variance": p.variance,
                                        "std_dev": p.std_dev} for p in points]}
        return EXIT_OK

    if task == "simulate":
        sim = cfg["simulate"]
        policy = efficient_policy(model, grid, sim["x0"], sim["K"], solutions=sols, seed=seed)
        rep, terminal = simulate_wealth(model, policy, sim["x0"], grid, num["paths"], seed,
                                        workers, return_terminal=True)
        if sim.get("terminal_csv"):
            write_terminal_csv(out / "terminal.csv", terminal)
        report["result"] = rep.to_dict() | {"d_star": policy.d_value}
        return EXIT_OK

    if task == "duality-check":
        dual = solve_dual_bsde(model, grid, num["riccati_paths"], seed + 1, num["basis_degree"],
                               workers)
        check = duality_consistency_check(sols[1], dual, grid)
        _write(out / "duality_residuals.csv", check.residual_csv())
        report["result"] = {"consistency": check.to_dict(), "Ytilde_0": dual.Y0}
        if "duality" in cfg:
            du = cfg["duality"]
            tw = dual_terminal_wealth_check(model, grid, du["x0"], du["K"], num["paths"], seed,
                                            num["riccati_paths"], num["basis_degree"], workers)
            report["result"]["terminal_wealth"] = tw.to_dict()
        return EXIT_OK if check.passed else EXIT_NUMERICAL

    raise ConfigError(f"unknown task {task!r}")


def main(argv=None):
    parser = argparse.ArgumentParser(prog="nlmv", description=__doc__.splitlines()[0])
    parser.add_argument("task", choices=TASKS)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--seed", type=int, help="override numerics.seed (unsigned 64-bit)")
    parser.add_argument("--paths", type=int, help="override numerics.paths")
    parser.add_argument("--out", help="output directory (default: outputs.dir or .)")
    parser.add_argument("--threads", type=int, help="worker cap (default: NLMV_THREADS or 1)")
    args = parser.parse_args(argv)

    out_dir = args.out or "."
    try:
        cfg = load_config(args.config)
    except NLMVError as exc:
        err = {"task": args.task, "status": "error", "reason": exc.reason, "error": str(exc),
               "exit_code": EXIT_SCHEMA}
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        _write(Path(out_dir) / f"{args.task}.json", json.dumps(err, sort_keys=True, indent=2) + "\n")
        print(json.dumps(err), file=sys.stderr)
        return EXIT_SCHEMA
    if args.out is None:
        out_dir = cfg.get("outputs", {}).get("dir", ".")
    num = cfg.setdefault("numerics", {})
    if args.seed is not None:
        num["seed"] = args.seed
    if args.paths is not None:
        num["paths"] = args.paths
    workers = args.threads
    if workers is None and os.environ.get("NLMV_THREADS"):
        workers = int(os.environ["NLMV_THREADS"])
    code, report = run(cfg, args.task, out_dir, workers)
    summary = {k: report[k] for k in ("task", "status", "exit_code") if k in report}
    if "reason" in report:
        summary["reason"] = report["reason"]
    print(json.dumps(summary))
    return code


if __name__ == "__main__":
    sys.exit(main())
