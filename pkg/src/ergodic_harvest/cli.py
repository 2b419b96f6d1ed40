"""Batch front-end: ``ergodic-harvest {solve,verify,simulate,sweep,validate}``.

Every run writes its artifacts plus ``manifest.json`` into one output
directory. The manifest holds the effective configuration (config file
merged with flags, flags winning) and can be fed back as a config file.
Worker thread counts only change scheduling and are never written out, so
JSON artifacts are byte-identical across thread counts.

Exit codes: 0 success, 2 input error, 3 failed model validation, 4 solver
or verification failure, 5 simulation failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .free_boundary import SolverConfig, SolverError, ThresholdSolution, solve_threshold, verify_hjb
from .model import ConfigError, ModelError, _jsonable, model_from_config, validate_assumptions
from .scale_speed import QuadratureError
from .simulate import (
    SimConfig, SimConfigError, SimulationError, calibrate_dt_constant, estimate_expected, estimate_pathwise,
    occupation_check, threshold_sweep,
)

EXIT_OK, EXIT_INPUT, EXIT_VALIDATION, EXIT_SOLVER, EXIT_SIMULATION = 0, 2, 3, 4, 5
OUT_ENV = "ERGODIC_HARVEST_OUT"

_SECTIONS = {"model", "solver", "validation", "simulate", "sweep", "verify", "runtime", "manifest"}
_SIM_KEYS = {f.name for f in dataclasses.fields(SimConfig)} | {"mode", "calibrate", "calibration_paths"}
_SOLVER_KEYS = {f.name for f in dataclasses.fields(SolverConfig)}


class CliError(Exception):
    def __init__(self, msg, code):
        super().__init__(msg)
        self.code = code


# ---------------------------------------------------------------------------
# config and artifacts


def load_config(path):
    """Parse a JSON config (or a manifest); input errors carry line and field."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise CliError(f"{path}: cannot read ({exc.strerror})", EXIT_INPUT) from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}", EXIT_INPUT) from None
    if not isinstance(cfg, dict):
        raise CliError(f"{path}: top level must be an object", EXIT_INPUT)
    bad = set(cfg) - _SECTIONS
    if bad:
        raise CliError(f"{path}: unknown section(s) {sorted(bad)}", EXIT_INPUT)
    if "model" not in cfg:
        raise CliError(f"{path}: model: required section missing", EXIT_INPUT)
    for name, keys in (("simulate", _SIM_KEYS), ("solver", _SOLVER_KEYS)):
        sec = cfg.get(name, {})
        if not isinstance(sec, dict):
            raise CliError(f"{path}: {name}: expected an object", EXIT_INPUT)
        extra = set(sec) - keys
        if extra:
            raise CliError(f"{path}: {name}: unknown field(s) {sorted(extra)}", EXIT_INPUT)
    cfg.pop("manifest", None)
    return cfg


def build_model(cfg):
    try:
        return model_from_config(cfg["model"], check_conditions=False)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_INPUT) from None


def _timestamp():
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = time.gmtime(int(epoch)) if epoch else time.gmtime()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", t)


def _out_dir(args):
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get(OUT_ENV, "runs")) / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_json(path, obj):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def write_manifest(out, cfg, action, extra=None):
    body = {k: v for k, v in cfg.items() if k != "runtime"}
    meta = {"tool_version": __version__, "timestamp": _timestamp(), "action": action,
            "output_dir": str(out), **(extra or {})}
    write_json(out / "manifest.json", {**body, "manifest": meta})


def _solver_cfg(cfg):
    try:
        return SolverConfig(**cfg.get("solver", {}))
    except TypeError as exc:
        raise CliError(f"solver: {exc}", EXIT_INPUT) from None


def _validate(rep, cfg, override):
    override = override or bool(cfg.get("validation", {}).get("override", False))
    if not rep.passed and not override:
        names = ", ".join(c.name for c in rep.failed())
        lines = [f"model validation failed: {names}"]
        lines += [f"  {c.name}: {c.witness}" for c in rep.failed()]
        lines.append("pass --override to proceed anyway")
        raise CliError("\n".join(lines), EXIT_VALIDATION)
    return rep


def _solve(model, cfg):
    try:
        return solve_threshold(model, cfg=_solver_cfg(cfg))
    except (SolverError, QuadratureError, ModelError) as exc:
        raise CliError(f"solver failed: {exc}", EXIT_SOLVER) from None


def _load_solution(path):
    p = Path(path)
    if not p.is_file():
        raise CliError(f"{path}: no such solution file", EXIT_INPUT)
    try:
        doc = json.loads(p.read_text())
        return doc, ThresholdSolution.from_dict(doc["solution"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"{path}: not a solution artifact ({exc})", EXIT_INPUT) from None


def _parse_floats(text, what):
    if text is None:
        return None
    try:
        return [float(t) for t in text.replace(",", " ").split()]
    except ValueError:
        raise CliError(f"{what}: expected comma-separated numbers, got {text!r}", EXIT_INPUT) from None


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args):
    cfg = load_config(args.config)
    model = build_model(cfg)
    out = _out_dir(args)
    rep = validate_assumptions(model)
    write_manifest(out, cfg, "validate")
    write_json(out / "validation.json", rep.to_dict())
    for c in rep.checks:
        print(f"{c.name:<28}{'PASS' if c.passed else 'FAIL'}" + ("" if c.passed else f"  {c.witness}"))
    if not rep.passed:
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_solve(args):
    cfg = load_config(args.config)
    if args.override:
        cfg.setdefault("validation", {})["override"] = True
    model = build_model(cfg)
    out = _out_dir(args)
    write_manifest(out, cfg, "solve")
    rep = validate_assumptions(model)
    write_json(out / "validation.json", rep.to_dict())
    _validate(rep, cfg, args.override)
    sol = _solve(model, cfg)
    write_json(out / "solution.json", {"model": cfg["model"], "solver": dataclasses.asdict(_solver_cfg(cfg)),
                                       "validation_passed": rep.passed, "solution": sol.to_dict()})
    print(f"beta* = {sol.beta_star:.12g}  lambda* = {sol.lambda_star:.12g}")
    print(f"|Theta| = {sol.theta_residual:.2e}  |Kb+h-lambda| = {sol.level_residual:.2e}  xi = {sol.critical.xi:.12g}")
    return EXIT_OK


def cmd_verify(args):
    doc, sol = _load_solution(args.solution)
    cfg = {"model": doc.get("model"), "verify": {"solution": str(args.solution)}}
    if cfg["model"] is None:
        raise CliError(f"{args.solution}: solution artifact lacks the model config", EXIT_INPUT)
    model = build_model(cfg)
    out = _out_dir(args)
    write_manifest(out, cfg, "verify")
    try:
        rep = verify_hjb(model, sol)
    except (QuadratureError, ModelError, ValueError) as exc:
        raise CliError(f"verification could not be evaluated: {exc}", EXIT_SOLVER) from None
    write_json(out / "report.json", rep.to_dict())
    print(rep.table())
    return EXIT_OK if rep.passed else EXIT_SOLVER


def _sim_section(cfg, args):
    sec = dict(cfg.get("simulate", {}))
    flags = {"threshold": getattr(args, "beta", None), "n_paths": args.paths, "horizon": args.horizon, "dt": args.dt,
             "seed": args.seed, "x0": args.x0, "burn_in": args.burn_in}
    for k, v in flags.items():
        if v is not None:
            sec[k] = v
    if getattr(args, "no_calibrate", False):
        sec["calibrate"] = False
    if getattr(args, "mode", None):
        sec["mode"] = args.mode
    return sec


def _sim_config(sec, threshold):
    fields = {k: v for k, v in sec.items() if k not in ("mode", "calibrate", "calibration_paths")}
    fields["threshold"] = threshold
    try:
        return SimConfig(**fields)
    except (SimConfigError, TypeError) as exc:
        raise CliError(f"simulate: {exc}", EXIT_INPUT) from None


def _reference(model, cfg, args):
    """(beta*, lambda*) from --solution, else solved on the spot."""
    if args.solution:
        _, sol = _load_solution(args.solution)
    else:
        sol = _solve(model, cfg)
    return sol


def _threads(cfg, args):
    t = args.threads if args.threads is not None else cfg.get("runtime", {}).get("threads", 1)
    if int(t) < 1:
        raise CliError(f"threads must be >= 1, got {t}", EXIT_INPUT)
    return int(t)


def cmd_simulate(args):
    cfg = load_config(args.config)
    model = build_model(cfg)
    sec = _sim_section(cfg, args)
    _sim_config(sec, sec.get("threshold") or 1.0)  # check invariants before any solve
    try:
        sol = _reference(model, cfg, args)
    except CliError:
        if sec.get("threshold") is None:
            raise
        sol = None
    beta = sec.get("threshold") or sol.beta_star
    simcfg = _sim_config(sec, beta)
    mode = sec.get("mode") or ("pathwise" if simcfg.n_paths == 1 else "expected")
    if mode not in ("expected", "pathwise"):
        raise CliError(f"simulate.mode: expected 'expected' or 'pathwise', got {mode!r}", EXIT_INPUT)
    if mode == "pathwise" and simcfg.n_paths != 1:
        simcfg = dataclasses.replace(simcfg, n_paths=1)
    sec.update({"threshold": beta, "mode": mode, "n_paths": simcfg.n_paths})
    cfg["simulate"] = sec
    threads = _threads(cfg, args)
    out = _out_dir(args)
    write_manifest(out, cfg, "simulate")
    try:
        c_dt = None
        cal = None
        if sec.get("calibrate", True):
            ncal = sec.get("calibration_paths") or (simcfg.n_paths if mode == "expected" else 1)
            cal = calibrate_dt_constant(model, simcfg, n_paths=ncal, threads=threads)
            c_dt = cal["c_dt"]
        if mode == "pathwise":
            res = estimate_pathwise(model, simcfg, c_dt=c_dt)
        else:
            res = estimate_expected(model, simcfg, threads=threads, c_dt=c_dt)
    except SimulationError as exc:
        raise CliError(f"simulation failed: {exc}", EXIT_SIMULATION) from None
    summary = res.summary()
    summary["mode"] = mode
    summary["tolerance"] = res.tolerance()
    summary["calibration"] = cal
    if math.isfinite(beta):
        summary["occupation"] = occupation_check(model, simcfg, res)
    if sol is not None:
        diff = res.estimate - sol.lambda_star
        summary["reference"] = {"beta_star": sol.beta_star, "lambda_star": sol.lambda_star, "difference": diff,
                                "within_tolerance": bool(abs(diff) <= res.tolerance())}
    write_json(out / "summary.json", summary)
    write_csv(out / "paths.csv", ["path", "average"], enumerate(res.values))
    edges = res.bin_edges
    write_csv(out / "occupation.csv", ["lower", "upper", "mass"], zip(edges[:-1], edges[1:], res.occupation))
    write_csv(out / "trace.csv", ["time", "running_average"], zip(res.trace_times, res.trace))
    line = f"estimate {res.estimate:.6g} +/- {res.tolerance():.2g} ({mode}, beta = {beta:.6g})"
    if sol is not None:
        ok = summary["reference"]["within_tolerance"]
        line += f"; lambda* = {sol.lambda_star:.6g}, diff {diff:+.2e} {'within' if ok else 'OUTSIDE'} tolerance"
    print(line)
    return EXIT_OK


def cmd_sweep(args):
    cfg = load_config(args.config)
    model = build_model(cfg)
    sweep = dict(cfg.get("sweep", {}))
    grid = _parse_floats(args.beta_grid, "--beta-grid")
    factors = _parse_floats(args.factors, "--factors")
    if grid is not None:
        sweep = {"betas": grid}
    elif factors is not None:
        sweep = {"factors": factors}
    if not sweep:
        sweep = {"factors": [0.5, 0.75, 1.0, 1.25, 1.5]}
    if not (sweep.get("betas") or sweep.get("factors")):
        raise CliError("sweep: empty threshold grid", EXIT_INPUT)
    sec = _sim_section(cfg, args)
    sec.pop("threshold", None)
    _sim_config(sec, 1.0)
    sol = _reference(model, cfg, args)
    if "betas" in sweep:
        betas = [float(b) for b in sweep["betas"]]
    else:
        betas = [float(f) * sol.beta_star for f in sweep["factors"]]
    if any(not (b > 0 and math.isfinite(b)) for b in betas):
        raise CliError(f"sweep: thresholds must be positive and finite, got {betas}", EXIT_INPUT)
    base = _sim_config(sec, betas[0])
    cfg["sweep"], cfg["simulate"] = sweep, sec
    threads = _threads(cfg, args)
    out = _out_dir(args)
    write_manifest(out, cfg, "sweep")
    try:
        res = threshold_sweep(model, base, betas, sol.lambda_star, calibrate=sec.get("calibrate", True),
                              threads=threads)
    except SimulationError as exc:
        raise CliError(f"simulation failed: {exc}", EXIT_SIMULATION) from None
    except SimConfigError as exc:
        raise CliError(f"sweep: {exc}", EXIT_INPUT) from None
    doc = res.to_dict()
    doc["beta_star"] = sol.beta_star
    write_json(out / "sweep.json", doc)
    cols = ["beta", "estimate", "stderr", "c_dt", "tolerance", "oracle", "oracle_ok", "below_optimum"]
    write_csv(out / "sweep.csv", cols, ([r[c] for c in cols] for r in res.rows))
    print(f"{'beta':>12}{'estimate':>12}{'oracle':>12}{'tol':>10}")
    for r in res.rows:
        mark = " *" if r["beta"] == res.argmax_beta else ""
        print(f"{r['beta']:12.6g}{r['estimate']:12.6g}{r['oracle']:12.6g}{r['tolerance']:10.2g}{mark}")
    print(f"lambda* = {sol.lambda_star:.6g}; all below optimum: {res.all_below_optimum}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="ergodic-harvest", description="Optimal harvesting thresholds for ergodic singular control.",
                                epilog="exit codes: 0 ok, 2 input, 3 validation, 4 solver/verify, 5 simulation")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command> or runs/<command>)")

    sp = sub.add_parser("validate", help="check the standing conditions on a model")
    sp.add_argument("config")
    common(sp)

    sp = sub.add_parser("solve", help="compute the optimal threshold and long-run rate")
    sp.add_argument("config")
    sp.add_argument("--override", action="store_true", help="solve even if validation fails")
    common(sp)

    sp = sub.add_parser("verify", help="check the HJB conditions for a solution artifact")
    sp.add_argument("solution")
    common(sp)

    for name, hlp in (("simulate", "Monte Carlo estimate at a threshold"), ("sweep", "estimates over a threshold grid")):
        sp = sub.add_parser(name, help=hlp)
        sp.add_argument("config")
        sp.add_argument("--solution", help="solution artifact supplying beta* and lambda*")
        if name == "simulate":
            sp.add_argument("--beta", type=float, help="threshold (default: beta*)")
            sp.add_argument("--mode", choices=["expected", "pathwise"])
        else:
            sp.add_argument("--beta-grid", help="comma-separated thresholds")
            sp.add_argument("--factors", help="comma-separated multiples of beta*")
        sp.add_argument("--paths", type=int)
        sp.add_argument("--horizon", type=float)
        sp.add_argument("--dt", type=float)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--x0", type=float)
        sp.add_argument("--burn-in", type=float, dest="burn_in")
        sp.add_argument("--no-calibrate", action="store_true", help="skip the dt-halving bias calibration")
        sp.add_argument("--threads", type=int, help="worker threads (not recorded in artifacts)")
        common(sp)
    return p


_COMMANDS = {"validate": cmd_validate, "solve": cmd_solve, "verify": cmd_verify, "simulate": cmd_simulate,
             "sweep": cmd_sweep}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
