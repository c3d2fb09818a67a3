"""Command line front end: run a canned scenario from a JSON config, fan a
config out over a parameter sweep, or re-verify a recorded trace against its
certified bound offline.

Exit status: 0 all checks passed, 1 at least one check failed or a bound is
violated, 2 configuration or usage error. Artifacts are deterministic; a
rerun with the same config and seeds reproduces every file byte for byte.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import math
import os
import sys
from typing import List, Optional, Tuple

import numpy as np

from .io import read_summary_json, read_trace_csv
from .scenarios import ConfigError, apply_override, load_config, run_scenario

__all__ = ["main"]

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="hand-sim",
        description="Deterministic experiments on accelerated gradient flow "
                    "and its restarting regularizations.")
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")

    run_p = sub.add_parser("run", help="run one scenario config")
    run_p.add_argument("config", help="scenario config (JSON)")
    run_p.add_argument("--out", default=None, metavar="DIR",
                       help="output directory (default: config out_dir)")
    run_p.add_argument("--seed", type=int, default=None, metavar="N",
                       help="override every seed field the scenario has "
                            "(solver.policy_seed, disturbance.seed, params.seed)")
    run_p.add_argument("--h", type=float, default=None, metavar="H",
                       help="override solver.h")
    run_p.add_argument("--quiet", action="store_true", help="suppress progress lines")

    sweep_p = sub.add_parser("sweep", help="run one config across a parameter grid")
    sweep_p.add_argument("config", help="scenario config (JSON)")
    sweep_p.add_argument("--param", required=True, metavar="KEY",
                         help="dotted config key to vary, e.g. solver.h")
    sweep_p.add_argument("--values", required=True, metavar="LIST",
                         help="comma-separated values (JSON scalars; bare words are strings)")
    sweep_p.add_argument("--out", default=None, metavar="DIR",
                         help="parent output directory (default: config out_dir)")
    sweep_p.add_argument("--quiet", action="store_true", help="suppress progress lines")

    check_p = sub.add_parser("check", help="re-verify a trace CSV against its recorded bound")
    check_p.add_argument("trace", help="trace CSV written by a rate scenario")
    check_p.add_argument("--bound", required=True, choices=("inverse-square", "exponential"),
                         help="which certified bound to re-verify")
    check_p.add_argument("--summary", default=None, metavar="JSON",
                         help="summary file holding the bound constants "
                              "(default: summary.json next to the trace)")
    return ap


def _apply_seed(config: dict, seed: int) -> dict:
    config = apply_override(config, "solver.policy_seed", seed)
    if "disturbance" in config:
        config = apply_override(config, "disturbance.seed", seed)
    if "seed" in config.get("params", {}):
        config = apply_override(config, "params.seed", seed)
    return config


def _cmd_run(args) -> int:
    config = load_config(args.config)
    if args.h is not None:
        config = apply_override(config, "solver.h", args.h)
    if args.seed is not None:
        config = _apply_seed(config, args.seed)
    return run_scenario(config, out_dir=args.out, quiet=args.quiet)


def _parse_values(text: str) -> List:
    values = []
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        try:
            values.append(json.loads(token))
        except ValueError:
            values.append(token)
    return values


def _value_token(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _sweep_job(payload: Tuple[dict, str]) -> int:
    config, out_dir = payload
    return run_scenario(config, out_dir=out_dir, quiet=True)


def _thread_cap(n_jobs: int) -> int:
    cap = os.environ.get("HAND_SIM_THREADS")
    if cap is not None:
        try:
            cap_n = int(cap)
        except ValueError:
            raise ConfigError("HAND_SIM_THREADS must be an integer, got %r" % cap)
        if cap_n < 1:
            raise ConfigError("HAND_SIM_THREADS must be at least 1")
        return min(cap_n, max(1, n_jobs))
    return min(max(1, n_jobs), os.cpu_count() or 1)


def _cmd_sweep(args) -> int:
    base = load_config(args.config)
    values = _parse_values(args.values)
    parent = args.out if args.out is not None else base["out_dir"]
    os.makedirs(parent, exist_ok=True)
    param_slug = args.param.replace(".", "-")

    jobs = []
    for value in values:
        cfg = apply_override(base, args.param, value)
        token = _value_token(value)
        out_dir = os.path.join(parent, "%s=%s" % (param_slug, token))
        jobs.append((token, cfg, out_dir))

    results = {}
    workers = _thread_cap(len(jobs))
    if jobs and workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            codes = list(pool.map(_sweep_job, [(cfg, out) for _, cfg, out in jobs]))
        for (token, _, out_dir), code in zip(jobs, codes):
            results[token] = (out_dir, code)
    else:
        for token, cfg, out_dir in jobs:
            results[token] = (out_dir, run_scenario(cfg, out_dir=out_dir, quiet=True))

    # merge in sorted-key order so the artifact is independent of scheduling
    merged = {
        "param": args.param,
        "values": [_value_token(v) for v in values],
        "runs": {
            token: {"out_dir": os.path.relpath(results[token][0], parent),
                    "exit_status": results[token][1],
                    "pass": results[token][1] == 0}
            for token in sorted(results)
        },
    }
    from .io import write_summary_json

    write_summary_json(os.path.join(parent, "sweep_summary.json"), merged)
    if not args.quiet:
        for token in sorted(results):
            print("sweep %s=%s: %s" % (args.param, token,
                                       "pass" if results[token][1] == 0 else "FAIL"))
    return EXIT_OK if all(code == 0 for _, code in results.values()) else EXIT_CHECK_FAILED


def _cmd_check(args) -> int:
    summary_path = args.summary
    if summary_path is None:
        summary_path = os.path.join(os.path.dirname(os.path.abspath(args.trace)), "summary.json")
    try:
        summary = read_summary_json(summary_path)
    except OSError as e:
        raise ConfigError("cannot read summary %s: %s" % (summary_path, e.strerror or e))
    except ValueError as e:
        raise ConfigError("%s: %s" % (summary_path, e))
    table_key = os.path.basename(args.trace)
    bound_checks = summary.get("bound_checks")
    if not isinstance(bound_checks, dict) or table_key not in bound_checks:
        raise ConfigError("summary %s records no bound constants for %r"
                          % (summary_path, table_key))
    bc = bound_checks[table_key]
    if bc.get("kind") != args.bound:
        raise ConfigError("trace %r was certified against %r, not %r"
                          % (table_key, bc.get("kind"), args.bound))
    try:
        table = read_trace_csv(args.trace)
    except OSError as e:
        raise ConfigError("cannot read trace %s: %s" % (args.trace, e.strerror or e))

    tol = float(bc["tol"])
    worst = -math.inf
    checked = 0
    if args.bound == "inverse-square":
        beta = float(bc["beta"])
        mask = (table.j == 0) & np.array([ev != "fault" for ev in table.event])
        for k in np.nonzero(mask)[0]:
            bound = beta / (table.tau[k] ** 2) + tol
            worst = max(worst, table.f_gap[k] - bound)
            checked += 1
    else:
        k_a = float(bc["k_a"])
        k_b = float(bc["k_b"])
        d_t = float(bc["delta_t"])
        r0_sq = float(bc["r0_sq"])
        for k in range(len(table.t)):
            if table.event[k] == "fault":
                continue
            s = table.t[k] + table.j[k]
            alpha = max(s - d_t, 0.0) / (d_t + 1.0)
            bound = k_a * math.exp(-k_b * alpha) * r0_sq + tol
            worst = max(worst, table.f_gap[k] - bound)
            checked += 1
    ok = checked > 0 and worst <= 0.0
    print("%s bound on %s: %s (%d samples, worst margin %.6g)"
          % (args.bound, table_key, "holds" if ok else "VIOLATED", checked,
             worst if checked else math.nan))
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def main(argv: Optional[List[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        return _cmd_check(args)
    except ConfigError as e:
        print("config error: %s" % e, file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as e:
        print("error: %s" % e, file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
