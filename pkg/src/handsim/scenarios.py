"""Canned experiments behind the command line: instability reproduction,
non-uniformity probes, rate-certificate runs for both restarting systems,
the restart-period sweep, discretization-order measurement, and empirical
robustness margins.

A scenario is a JSON config resolved against per-scenario defaults (unknown
keys rejected with their dotted path; every default echoed back into the
summary), run deterministically, and reduced to flat-file artifacts: trace
or table CSVs, one summary JSON embedding the resolved config and every
check result, and a gnuplot script. The process exit status is a pure
function of the checks: 0 when every check passes, 1 otherwise, 2 reserved
for config errors (raised here as ConfigError).
"""

from __future__ import annotations

import copy
import math
import os
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .analysis import (
    beta_constant,
    check_monotonicity,
    check_inverse_square_rate,
    check_period_contraction,
    check_exponential_rate,
    convergence_time_estimate,
    hand1_phase_probe,
    jump_decrease_hand1,
    jump_decrease_hand2,
    k0_constant,
    k1_constant,
    lyapunov,
    optimal_restart,
    time_to_epsilon,
    uniformity_probe,
)
from .core import CostFunction, SolverConfig, Trace, corpus
from .dynamics import (
    DisturbanceSpec,
    OdeParams,
    limiting_integral,
    make_hand_flow,
    make_rep1_flow,
    make_rep2_flow,
)
from .engine import HybridSystem, PerturbationSet, flow_only_system, simulate
from .hands import HandParams, hand1, hand2, target_distance_fn
from .io import (
    format_float,
    write_summary_json,
    write_table_csv,
    write_text,
    write_trace_csv,
)

__all__ = [
    "ConfigError",
    "SCENARIOS",
    "default_config",
    "parse_config",
    "load_config",
    "apply_override",
    "run_scenario",
]


class ConfigError(ValueError):
    """Invalid or unknown configuration; maps to process exit status 2."""


SCENARIOS = (
    "instability",
    "uniformity-probe",
    "hand1-rate",
    "hand2-rate",
    "restart-sweep",
    "discretization-order",
    "robustness-margin",
)

_SOLVER_DEFAULT = {
    "h": 1e-3,
    "t_end": 100.0,
    "max_jumps": 1000000,
    "integrator": "rk4",
    "jump_policy": "latest",
    "policy_seed": 0,
    "record_stride": 10,
}

_DISTURBANCE_OFF = {
    "kind": "zero",
    "eps": 0.0,
    "period": None,
    "axis": "x2",
    "value": None,
    "seed": 0,
    "hold": None,
    "channel": "e2",
}


def _solver(**over) -> dict:
    d = dict(_SOLVER_DEFAULT)
    d.update(over)
    return d


def _disturbance(**over) -> dict:
    d = dict(_DISTURBANCE_OFF)
    d.update(over)
    return d


# Default trees. Every key a config file may set appears here; anything
# else is rejected by name. t_max = 2e for the bounded-contrast run keeps
# the restart window well inside the dwell condition for example1's mu.
_DEFAULTS = {
    "instability": {
        "scenario": "instability",
        "cost": "example1",
        "out_dir": "out",
        "ode": {"p": 2, "c": 0.25, "ell": None, "t0": 1.0},
        "hand": {"t_min": 1.0, "t_max": 2.0 * math.e, "c": 0.25, "t_med": None},
        "solver": _solver(h=1e-2, t_end=2e5, max_jumps=1, integrator="euler",
                          record_stride=500),
        "disturbance": _disturbance(kind="square_wave", eps=1e-3, period=1e4),
        "params": {
            "x0": 1e-3,
            "growth_factor": 100.0,
            "bounded_threshold": 0.1,
            "bounded_after": 50.0,
            "hand_t_end": 3e4,
        },
    },
    "uniformity-probe": {
        "scenario": "uniformity-probe",
        "cost": "example1",
        "out_dir": "out",
        "ode": {"p": 2, "c": 0.25, "ell": None, "t0": 1.0},
        "hand": {"t_min": 1.0, "t_max": 4.0, "c": 0.25, "t_med": None},
        "solver": _solver(h=1e-2, t_end=400.0, record_stride=5, max_jumps=100000),
        "params": {
            "t0_values": [1.0, 10.0, 100.0, 1000.0],
            "phases": None,
            "x_offset": 1.0,
            "eps": 1e-2,
            "t_end_scale": 6.0,
            "ratio_budget": 1.5,
            "ell2": 3.0,
            "s_values": [10.0, 100.0, 1000.0, 10000.0],
            "r": 1.0,
            "tail_budget": 3e-4,
        },
    },
    "hand1-rate": {
        "scenario": "hand1-rate",
        "cost": "all",
        "out_dir": "out",
        "hand": {"t_min": 1.0, "t_max": 50.0, "c": 1.0, "t_med": 50.0},
        "solver": _solver(h=1e-3, t_end=49.0, max_jumps=3, record_stride=20),
        "params": {
            "seed": 7,
            "tol_abs": 1e-6,
            "tol_scale": 10.0,
            "mono_slack_scale": 10.0,
            "check_t_form": True,
        },
    },
    "hand2-rate": {
        "scenario": "hand2-rate",
        "cost": "sphere1",
        "out_dir": "out",
        "hand": {"t_min": 1.0, "t_max": 2.0, "c": 1.0, "t_med": None},
        "solver": _solver(h=1e-3, t_end=100.0, record_stride=10),
        "params": {
            "x0": 5.0,
            "tol": 0.0,
            "contraction_slack": 1e-3,
            "closed_form_tol": 1e-12,
            "mono_slack_scale": 10.0,
        },
    },
    "restart-sweep": {
        "scenario": "restart-sweep",
        "cost": "sphere1",
        "out_dir": "out",
        "solver": _solver(h=1e-3, t_end=80.0, max_jumps=100000, record_stride=50),
        "params": {
            "t_min": 0.1,
            "c": 1.0,
            "x0": 1.0,
            "eps": 1e-6,
            "n_grid": 15,
            "span": [0.5, 2.0],
            "factor_budget": 2.0,
        },
    },
    "discretization-order": {
        "scenario": "discretization-order",
        "cost": "sphere1",
        "out_dir": "out",
        "hand": {"t_min": 1.0, "t_max": 2.0, "c": 1.0, "t_med": None},
        "solver": _solver(h=1e-3, t_end=100.0, record_stride=10),
        "params": {
            "x0": 5.0,
            "k_min": 6,
            "k_max": 10,
            "ref_factor": 128,
            "euler_order": [0.8, 1.2],
            "rk4_order": [3.2, 4.8],
            "tol": 0.0,
            "contraction_slack": 1e-3,
            "closed_form_tol": 1e-12,
            "mono_slack_scale": 10.0,
        },
    },
    "robustness-margin": {
        "scenario": "robustness-margin",
        "cost": "example1",
        "out_dir": "out",
        "hand": {"t_min": 1.0, "t_max": 2.0 * math.e, "c": 0.25, "t_med": None},
        "solver": _solver(h=1e-2, t_end=1e4, integrator="euler", max_jumps=1000000,
                          record_stride=100),
        "disturbance": _disturbance(kind="square_wave", eps=0.0, period=100.0),
        "params": {
            "x0": 1e-3,
            "delta": 0.1,
            "settle": 50.0,
            "eps_lo": 1e-4,
            "eps_hi": 1.0,
            "bisect_steps": 8,
        },
    },
}


def default_config(scenario: str) -> dict:
    if scenario not in _DEFAULTS:
        raise ConfigError("unknown scenario %r (one of: %s)" % (scenario, ", ".join(SCENARIOS)))
    return copy.deepcopy(_DEFAULTS[scenario])


def _merge(default: dict, user: dict, path: str) -> dict:
    out = copy.deepcopy(default)
    for key, val in user.items():
        here = (path + "." + key) if path else key
        if key not in default:
            allowed = ", ".join(sorted(default))
            raise ConfigError("unknown key %r (allowed here: %s)" % (here, allowed))
        if isinstance(default[key], dict):
            if not isinstance(val, dict):
                raise ConfigError("key %r must be an object" % here)
            out[key] = _merge(default[key], val, here)
        else:
            out[key] = copy.deepcopy(val)
    return out


def parse_config(data: dict) -> dict:
    """Resolve a raw config dict against the scenario defaults and validate
    it. Returns the fully resolved config (suitable for echoing and for
    byte-identical round-trips through JSON)."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    if "scenario" not in data:
        raise ConfigError("missing required key 'scenario'")
    scenario = data["scenario"]
    resolved = _merge(default_config(scenario), data, "")
    _validate(resolved)
    return resolved


def load_config(path: str) -> dict:
    import json

    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as e:
        raise ConfigError("cannot read config %s: %s" % (path, e.strerror or e))
    except ValueError as e:
        # JSONDecodeError carries line/column
        raise ConfigError("%s: %s" % (path, e))
    return parse_config(data)


def apply_override(config: dict, dotted_key: str, value) -> dict:
    """Return a copy of config with one dotted key replaced; the key must
    already exist (overrides never invent keys)."""
    parts = dotted_key.split(".")
    out = copy.deepcopy(config)
    node = out
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise ConfigError("unknown override key %r" % dotted_key)
        node = node[p]
    last = parts[-1]
    if not isinstance(node, dict) or last not in node:
        raise ConfigError("unknown override key %r" % dotted_key)
    if isinstance(node[last], dict):
        raise ConfigError("override key %r names a section, not a value" % dotted_key)
    node[last] = value
    return out


# ---------------------------------------------------------------------------
# validation and construction of runtime objects from config sections

def _cost_from(config: dict, allow_all: bool = False) -> Tuple[str, Optional[CostFunction]]:
    name = config["cost"]
    if allow_all and name == "all":
        return name, None
    table = corpus()
    if name not in table:
        allowed = ", ".join(sorted(table) + (["all"] if allow_all else []))
        raise ConfigError("unknown key value cost=%r (allowed: %s)" % (name, allowed))
    return name, table[name]


def _hand_from(section: dict) -> HandParams:
    try:
        return HandParams(
            t_min=float(section["t_min"]),
            t_max=float(section["t_max"]),
            c=float(section["c"]),
            t_med=None if section["t_med"] is None else float(section["t_med"]),
        )
    except ValueError as e:
        raise ConfigError("hand: %s" % e)


def _ode_from(section: dict) -> OdeParams:
    try:
        return OdeParams(
            p=float(section["p"]),
            c=float(section["c"]),
            ell=None if section["ell"] is None else float(section["ell"]),
            t0=float(section["t0"]),
        )
    except ValueError as e:
        raise ConfigError("ode: %s" % e)


def _solver_from(section: dict, **over) -> SolverConfig:
    vals = dict(section)
    vals.update(over)
    try:
        return SolverConfig(
            h=float(vals["h"]),
            t_end=float(vals["t_end"]),
            max_jumps=int(vals["max_jumps"]),
            integrator=vals["integrator"],
            jump_policy=vals["jump_policy"],
            policy_seed=int(vals["policy_seed"]),
            record_stride=int(vals["record_stride"]),
        )
    except (ValueError, TypeError) as e:
        raise ConfigError("solver: %s" % e)


_AXIS_BLOCKS = ("x1", "x2", "clock")


def _axis_vector(axis, n: int) -> np.ndarray:
    dim = 2 * n + 1
    if isinstance(axis, str):
        if axis not in _AXIS_BLOCKS:
            raise ConfigError("disturbance.axis: unknown block %r (one of %s, or an explicit vector)"
                              % (axis, "/".join(_AXIS_BLOCKS)))
        v = np.zeros(dim)
        if axis == "x1":
            v[:n] = 1.0
        elif axis == "x2":
            v[n:2 * n] = 1.0
        else:
            v[-1] = 1.0
        return v / np.linalg.norm(v)
    v = np.asarray(axis, dtype=float)
    if v.shape != (dim,):
        raise ConfigError("disturbance.axis: expected %d components, got %r" % (dim, list(np.shape(axis))))
    return v


def _disturbance_from(section: dict, n: int) -> Tuple[Optional[DisturbanceSpec], str]:
    kind = section["kind"]
    channel = section["channel"]
    if channel not in ("e1", "e2", "e3", "e4", "e5", "e6"):
        raise ConfigError("disturbance.channel: unknown channel %r" % channel)
    dim = 2 * n + 1
    try:
        if kind == "zero":
            return None, channel
        if kind == "constant":
            if section["value"] is None:
                raise ConfigError("disturbance.value is required for kind='constant'")
            axis = _axis_vector(section["axis"], n)
            return DisturbanceSpec.constant(axis * float(section["value"])), channel
        if kind == "square_wave":
            if section["period"] is None:
                raise ConfigError("disturbance.period is required for kind='square_wave'")
            return DisturbanceSpec.square_wave(
                dim, float(section["eps"]), float(section["period"]),
                axis=_axis_vector(section["axis"], n)), channel
        if kind == "sinusoid":
            if section["period"] is None:
                raise ConfigError("disturbance.period is required for kind='sinusoid'")
            return DisturbanceSpec.sinusoid(
                dim, float(section["eps"]), float(section["period"]),
                axis=_axis_vector(section["axis"], n)), channel
        if kind == "uniform_random":
            hold = section["hold"]
            if hold is None:
                raise ConfigError("disturbance.hold is required for kind='uniform_random'")
            return DisturbanceSpec.uniform_random(
                dim, float(section["eps"]), int(section["seed"]), float(hold)), channel
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError("disturbance: %s" % e)
    raise ConfigError("disturbance.kind: unknown kind %r" % kind)


def _perturbation(spec: Optional[DisturbanceSpec], channel: str) -> Optional[PerturbationSet]:
    if spec is None:
        return None
    return PerturbationSet(**{channel: spec})


def _validate(config: dict) -> None:
    scenario = config["scenario"]
    if scenario not in _DEFAULTS:
        raise ConfigError("unknown scenario %r (one of: %s)" % (scenario, ", ".join(SCENARIOS)))
    _cost_from(config, allow_all=(scenario == "hand1-rate"))
    if "hand" in config:
        _hand_from(config["hand"])
    if "ode" in config:
        _ode_from(config["ode"])
    if "solver" in config:
        _solver_from(config["solver"])
    if "disturbance" in config:
        name, f = _cost_from(config, allow_all=(scenario == "hand1-rate"))
        n = f.dim if f is not None else 1
        _disturbance_from(config["disturbance"], n)
    p = config.get("params", {})
    for key, val in p.items():
        if key in ("n_grid", "bisect_steps", "k_min", "k_max", "ref_factor", "seed"):
            if not isinstance(val, int) or isinstance(val, bool):
                raise ConfigError("params.%s must be an integer" % key)
    if scenario == "restart-sweep":
        if p["n_grid"] < 3:
            raise ConfigError("params.n_grid must be at least 3")
        span = p["span"]
        if (not isinstance(span, (list, tuple)) or len(span) != 2
                or not (0 < float(span[0]) < float(span[1]))):
            raise ConfigError("params.span must be [lo, hi] with 0 < lo < hi")
    if scenario == "discretization-order" and p["k_min"] >= p["k_max"]:
        raise ConfigError("params.k_min must be below params.k_max")


# ---------------------------------------------------------------------------
# shared pieces

def _x_offset(f: CostFunction, x0) -> np.ndarray:
    if isinstance(x0, (list, tuple)):
        v = np.asarray(x0, dtype=float)
        if v.shape != (f.dim,):
            raise ConfigError("params.x0: expected %d components" % f.dim)
        return v
    return np.full(f.dim, float(x0))


def _hand_z0(f: CostFunction, offset: np.ndarray, tau0: float) -> np.ndarray:
    x = f.xstar + offset
    return np.concatenate([x, x, [tau0]])


def _gnuplot_header(title: str) -> str:
    return ("# gnuplot script; run from this directory\n"
            "set datafile separator ','\n"
            "set key left top\n"
            "set title '%s'\n" % title)


def _finish(out_dir: str, summary: dict, plot: str, quiet: bool) -> int:
    checks = summary["checks"]
    summary["pass"] = all(bool(v) for v in checks.values())
    write_summary_json(os.path.join(out_dir, "summary.json"), summary)
    write_text(os.path.join(out_dir, "plot.gp"), plot)
    if not quiet:
        for name, ok in checks.items():
            print("  check %-32s %s" % (name, "pass" if ok else "FAIL"))
    return 0 if summary["pass"] else 1


def _ode_system(rep: str, params: OdeParams, f: CostFunction) -> HybridSystem:
    flow = make_rep1_flow(params, f) if rep == "rep1" else make_rep2_flow(params, f)
    return flow_only_system(flow, f.dim, meta={"kind": "ode-" + rep, "t0": params.t0})


# ---------------------------------------------------------------------------
# scenario runners

def _run_instability(config: dict, out_dir: str, quiet: bool) -> int:
    _, f = _cost_from(config)
    ode = _ode_from(config["ode"])
    hp = _hand_from(config["hand"])
    p = config["params"]
    spec, channel = _disturbance_from(config["disturbance"], f.dim)
    pert = _perturbation(spec, channel)
    offset = _x_offset(f, p["x0"])
    r0 = float(np.linalg.norm(offset))
    if r0 <= 0.0:
        raise ConfigError("params.x0 must give a nonzero initial offset")
    threshold = float(p["growth_factor"]) * r0
    xstar = f.xstar

    def escaped(t, j, z):
        return float(np.linalg.norm(z[:f.dim] - xstar)) >= threshold

    summary = {"config": config, "checks": {}, "runs": {}}
    artifacts = []
    for rep in ("rep1", "rep2"):
        sys = _ode_system(rep, ode, f)
        x1 = f.xstar + offset
        x2 = np.zeros(f.dim) if rep == "rep1" else x1.copy()
        z0 = np.concatenate([x1, x2, [ode.t0]])
        cfg = _solver_from(config["solver"])
        trace = simulate(sys, z0, cfg, pert, stop_condition=escaped)
        name = "trace_%s.csv" % rep
        # rep1's second block is a velocity; measure distance against rest
        if rep == "rep1":
            dist = lambda z: math.sqrt(float(np.dot(z[:f.dim] - xstar, z[:f.dim] - xstar))
                                       + float(np.dot(z[f.dim:2 * f.dim], z[f.dim:2 * f.dim])))
        else:
            dist = None
        write_trace_csv(os.path.join(out_dir, name), trace, f, ode.c, dist_fn=dist)
        artifacts.append(name)
        final_growth = float(np.linalg.norm(trace.zs[-1][:f.dim] - xstar)) / r0
        diverged = trace.termination == "condition" or trace.termination == "fault"
        summary["runs"][rep] = {
            "termination": trace.termination,
            "stopped_at_t": float(trace.ts[-1]),
            "growth_reached": final_growth,
            "diverged": diverged,
        }
        summary["checks"]["%s_diverges" % rep] = diverged
        if not quiet:
            print("  %s: %s at t=%.6g (growth %.3g x)" % (rep, trace.termination, trace.ts[-1], final_growth))

    hsys = hand2(f, hp)
    z0 = _hand_z0(f, offset, hp.t_min)
    cfg = _solver_from(config["solver"], t_end=float(p["hand_t_end"]),
                       max_jumps=_SOLVER_DEFAULT["max_jumps"], jump_policy="latest")
    trace = simulate(hsys, z0, cfg, pert)
    dist_fn = target_distance_fn(f, hp)
    name = "trace_hand2.csv"
    write_trace_csv(os.path.join(out_dir, name), trace, f, hp.c, dist_fn=dist_fn)
    artifacts.append(name)
    after = float(p["bounded_after"])
    dists = np.array([dist_fn(trace.zs[k]) for k in range(len(trace.ts)) if trace.ts[k] >= after])
    worst = float(dists.max()) if dists.size else float("nan")
    bounded = (trace.termination == "horizon" and dists.size > 0
               and worst <= float(p["bounded_threshold"]))
    summary["runs"]["hand2"] = {
        "termination": trace.termination,
        "jumps": len(trace.events),
        "worst_distance_after_settle": worst,
        "bounded": bounded,
    }
    summary["checks"]["hand2_bounded"] = bounded
    summary["artifacts"] = artifacts + ["summary.json", "plot.gp"]
    if not quiet:
        print("  hand2: %s, worst distance after t=%g: %.3g" % (trace.termination, after, worst))

    plot = (_gnuplot_header("disturbed runs: distance to the target set")
            + "set logscale y\nset xlabel 't'\nset ylabel 'dist_A'\n"
            + "plot 'trace_rep1.csv' using 1:%d with lines title 'ODE (velocity form)', \\\n"
              "     'trace_rep2.csv' using 1:%d with lines title 'ODE (averaged form)', \\\n"
              "     'trace_hand2.csv' using 1:%d with lines title 'restarting run'\n"
            % (6 + 2 * f.dim, 6 + 2 * f.dim, 6 + 2 * f.dim))
    return _finish(out_dir, summary, plot, quiet)


def _run_uniformity(config: dict, out_dir: str, quiet: bool) -> int:
    _, f = _cost_from(config)
    ode = _ode_from(config["ode"])
    hp = _hand_from(config["hand"])
    sol = config["solver"]
    p = config["params"]
    offset = _x_offset(f, p["x_offset"])
    eps = float(p["eps"])

    rows = uniformity_probe(f, ode, [float(v) for v in p["t0_values"]], offset, eps,
                            h=float(sol["h"]), t_end_scale=float(p["t_end_scale"]),
                            record_stride=int(sol["record_stride"]),
                            integrator=sol["integrator"])
    write_table_csv(os.path.join(out_dir, "probe_ode.csv"),
                    ["t0", "time_to_eps", "termination"],
                    [[r["t0"], r["time"], r["termination"]] for r in rows])
    times = [r["time"] for r in rows]
    increasing = (all(t is not None for t in times)
                  and all(times[i] < times[i + 1] for i in range(len(times) - 1)))

    phases = p["phases"]
    if phases is None:
        phases = [hp.t_min, 0.5 * (hp.t_min + hp.t_max), hp.t_max]
    rows2 = hand1_phase_probe(f, hp, [float(v) for v in phases], offset, eps,
                              h=float(sol["h"]), t_end=float(sol["t_end"]),
                              record_stride=int(sol["record_stride"]),
                              integrator=sol["integrator"])
    write_table_csv(os.path.join(out_dir, "probe_hand1.csv"),
                    ["tau0", "time_to_eps", "termination"],
                    [[r["tau0"], r["time"], r["termination"]] for r in rows2])
    times2 = [r["time"] for r in rows2]
    if all(t is not None for t in times2) and min(times2) > 0:
        ratio = max(times2) / min(times2)
        phase_ok = ratio <= float(p["ratio_budget"])
    else:
        ratio = None
        phase_ok = False

    ell2 = float(p["ell2"])
    r = float(p["r"])
    s_values = [float(s) for s in p["s_values"]]
    ints = [limiting_integral(ell2, s, r) for s in s_values]
    write_table_csv(os.path.join(out_dir, "limiting_integral.csv"),
                    ["s_k", "integral"], list(zip(s_values, ints)))
    tail_ok = (all(ints[i] > ints[i + 1] for i in range(len(ints) - 1))
               and ints[-1] <= float(p["tail_budget"]) * ell2)

    summary = {
        "config": config,
        "checks": {
            "ode_times_strictly_increasing": increasing,
            "hand1_phase_ratio_within_budget": phase_ok,
            "limiting_integral_tail_vanishes": tail_ok,
        },
        "results": {
            "ode_probe": rows,
            "hand1_probe": rows2,
            "hand1_phase_ratio": ratio,
            "limiting_integral": [{"s_k": s, "value": v} for s, v in zip(s_values, ints)],
        },
        "artifacts": ["probe_ode.csv", "probe_hand1.csv", "limiting_integral.csv",
                      "summary.json", "plot.gp"],
    }
    if not quiet:
        print("  ODE probe times: %s" % ["%g" % t if t is not None else "none" for t in times])
        print("  phase probe times: %s (ratio %s)"
              % (["%g" % t if t is not None else "none" for t in times2],
                 "%.3f" % ratio if ratio is not None else "undefined"))
    plot = (_gnuplot_header("time to reach the epsilon sublevel set")
            + "set logscale xy\nset xlabel 'start time t0'\nset ylabel 'time to eps'\n"
            + "plot 'probe_ode.csv' using 1:2 with linespoints title 'time-varying flow'\n")
    return _finish(out_dir, summary, plot, quiet)


def _run_hand1_rate(config: dict, out_dir: str, quiet: bool) -> int:
    name, f_single = _cost_from(config, allow_all=True)
    costs = corpus() if f_single is None else {name: f_single}
    hp = _hand_from(config["hand"])
    p = config["params"]
    cfg = _solver_from(config["solver"])
    rng_seed = int(p["seed"])
    summary = {"config": config, "checks": {}, "traces": {}, "bound_checks": {}}
    artifacts = []
    for cname in sorted(costs):
        f = costs[cname]
        sys = hand1(f, hp)
        rng = np.random.default_rng(rng_seed)
        x0 = f.xstar + rng.standard_normal(f.dim)
        z0 = np.concatenate([x0, x0, [hp.t_min]])
        trace = simulate(sys, z0, cfg)
        r = float(np.linalg.norm(x0 - f.xstar))
        beta = beta_constant(r, hp.c, hp.t_min, f.gap(x0))
        tol = float(p["tol_abs"]) + float(p["tol_scale"]) * f.lipschitz * cfg.h
        rep = check_inverse_square_rate(trace, f, beta, tol=tol)
        mono = check_monotonicity(trace, f, hp.c,
                                  slack_per_step=float(p["mono_slack_scale"]) * f.lipschitz * cfg.h)
        ok = rep.satisfied and mono.satisfied
        if p["check_t_form"]:
            rep_t = check_inverse_square_rate(trace, f, beta, tol=tol, use_clock=False)
            ok = ok and rep_t.satisfied
        fname = "trace_%s.csv" % cname
        write_trace_csv(os.path.join(out_dir, fname), trace, f, hp.c,
                        dist_fn=target_distance_fn(f, hp))
        artifacts.append(fname)
        summary["traces"][cname] = {
            "file": fname,
            "beta": beta,
            "tolerance": tol,
            "quadratic_bound_satisfied": rep.satisfied,
            "worst_margin": rep.worst_margin,
            "energy_monotone": mono.satisfied,
        }
        summary["bound_checks"][fname] = {
            "kind": "inverse-square", "beta": beta, "tol": tol, "t_min": hp.t_min,
        }
        summary["checks"][cname] = ok
        if not quiet:
            print("  %-10s bound %s (margin %.3g), energy monotone %s"
                  % (cname, "holds" if rep.satisfied else "VIOLATED", rep.worst_margin, mono.satisfied))
    summary["artifacts"] = artifacts + ["summary.json", "plot.gp"]
    first = sorted(costs)[0]
    bc = summary["bound_checks"]["trace_%s.csv" % first]
    plot = (_gnuplot_header("quadratic decay of the cost gap")
            + "set logscale y\nset xlabel 't'\nset ylabel 'f gap'\n"
            + "beta=%s\ntmin=%s\n" % (format_float(bc["beta"]), format_float(bc["t_min"]))
            + "plot 'trace_%s.csv' using 1:%d with lines title 'measured gap', \\\n"
              "     beta/((x+tmin)**2) with lines dashtype 2 title 'certified bound'\n"
            % (first, 4 + 2 * costs[first].dim))
    return _finish(out_dir, summary, plot, quiet)


def _run_hand2_rate(config: dict, out_dir: str, quiet: bool) -> int:
    _, f = _cost_from(config)
    hp = _hand_from(config["hand"])
    p = config["params"]
    cfg = _solver_from(config["solver"])
    sys = hand2(f, hp)
    z0 = _hand_z0(f, _x_offset(f, p["x0"]), hp.t_min)
    trace = simulate(sys, z0, cfg)
    rep = check_exponential_rate(trace, f, hp, tol=float(p["tol"]))
    con = check_period_contraction(trace, f, hp, slack=float(p["contraction_slack"]))
    mono = check_monotonicity(trace, f, hp.c,
                              slack_per_step=float(p["mono_slack_scale"]) * f.lipschitz * cfg.h)
    worst_rel = 0.0
    for rec in trace.events:
        dv_sim = lyapunov(rec.z_post, f, hp.c) - lyapunov(rec.z_pre, f, hp.c)
        dv_form = jump_decrease_hand2(rec.z_pre, f, hp)
        if abs(dv_form) > 1e-300:
            worst_rel = max(worst_rel, abs(dv_sim - dv_form) / abs(dv_form))
    closed_ok = worst_rel <= float(p["closed_form_tol"])
    fname = "trace.csv"
    write_trace_csv(os.path.join(out_dir, fname), trace, f, hp.c,
                    dist_fn=target_distance_fn(f, hp))
    r0 = float(np.linalg.norm(z0[:f.dim] - f.xstar))
    summary = {
        "config": config,
        "constants": dict(rep.detail),
        "checks": {
            "exponential_bound": rep.satisfied,
            "per_period_contraction": con.satisfied,
            "energy_monotone": mono.satisfied,
            "jump_identity_matches": closed_ok,
        },
        "results": {
            "worst_bound_margin": rep.worst_margin,
            "worst_contraction_ratio": con.worst_margin,
            "periods_checked": con.checked,
            "jumps": len(trace.events),
            "closed_form_worst_rel_err": worst_rel,
        },
        "bound_checks": {
            fname: {
                "kind": "exponential",
                "k_a": rep.detail["k_a"],
                "k_b": rep.detail["k_b"],
                "delta_t": hp.t_max - hp.t_min,
                "r0_sq": r0 * r0,
                "tol": float(p["tol"]),
            }
        },
        "artifacts": [fname, "summary.json", "plot.gp"],
    }
    if not quiet:
        print("  exponential bound %s (margin %.3g), contraction worst %.4g over %d periods"
              % ("holds" if rep.satisfied else "VIOLATED", rep.worst_margin,
                 con.worst_margin, con.checked))
    bc = summary["bound_checks"][fname]
    plot = (_gnuplot_header("exponential decay of the cost gap")
            + "set logscale y\nset xlabel 't'\nset ylabel 'f gap'\n"
            + "ka=%s\nkb=%s\ndT=%s\nr0sq=%s\n"
            % tuple(format_float(bc[k]) for k in ("k_a", "k_b", "delta_t", "r0_sq"))
            + "alpha(t)=(t-dT > 0 ? t-dT : 0)/(dT+1)\n"
            + "plot 'trace.csv' using 1:%d with lines title 'measured gap', \\\n"
              "     'trace.csv' using 1:(ka*exp(-kb*alpha($1+$2))*r0sq) with lines dashtype 2 title 'certified bound'\n"
            % (4 + 2 * f.dim))
    return _finish(out_dir, summary, plot, quiet)


def _run_restart_sweep(config: dict, out_dir: str, quiet: bool) -> int:
    _, f = _cost_from(config)
    if f.mu is None:
        raise ConfigError("cost: restart-sweep needs a strongly convex cost with known mu")
    p = config["params"]
    t_min = float(p["t_min"])
    c = float(p["c"])
    eps = float(p["eps"])
    x0 = _x_offset(f, p["x0"])
    gap0 = f.gap(f.xstar + x0)
    dstar = optimal_restart(c, f.mu, t_min)
    t_eps = convergence_time_estimate(c, f.mu, t_min, gap0, eps)
    lo, hi = float(p["span"][0]) * dstar, float(p["span"][1]) * dstar
    n = int(p["n_grid"])
    grid = np.exp(np.linspace(math.log(lo), math.log(hi), n))

    rows = []
    measured = np.full(n, math.inf)
    bound = np.full(n, math.inf)
    for i, dT in enumerate(grid):
        hp = HandParams(t_min=t_min, t_max=t_min + float(dT), c=c)
        sysd = hand2(f, hp)
        z0 = _hand_z0(f, x0, t_min)
        cfg = _solver_from(config["solver"])
        trace = simulate(sysd, z0, cfg)
        # end-of-period samples: the gap just before each reset, which x1
        # carries unchanged through the jump to hybrid time (t, j) = ((k+1)dT, k+1)
        gaps = np.array([f.gap(rec.z_pre[:f.dim]) for rec in trace.events])
        k1 = k1_constant(c, f.mu, t_min, float(dT))
        hit_j = None
        for k in range(len(gaps)):
            if np.all(gaps[k:] <= eps):
                hit_j = k + 1
                break
        if hit_j is not None:
            measured[i] = hit_j * float(dT)
        if k1 < 1.0 and gap0 > eps:
            bj = int(math.ceil(math.log(gap0 / eps) / (-math.log(k1))))
            bound[i] = bj * float(dT)
        elif gap0 <= eps:
            bound[i] = 0.0
        rows.append([i, float(dT), k1,
                     None if hit_j is None else measured[i],
                     None if hit_j is None else hit_j,
                     None if not np.isfinite(bound[i]) else bound[i],
                     len(trace.events)])
        if not quiet:
            print("  dT=%-8.4f k1=%.4f measured t=%-8s bound t=%-8s"
                  % (dT, k1,
                     "%.3f" % measured[i] if np.isfinite(measured[i]) else "none",
                     "%.3f" % bound[i] if np.isfinite(bound[i]) else "none"))
    write_table_csv(os.path.join(out_dir, "sweep.csv"),
                    ["index", "delta_t", "k1", "measured_t", "measured_periods",
                     "bound_t", "jumps"], rows)

    nearest = int(np.argmin(np.abs(grid - dstar)))
    m_arg = int(np.argmin(measured))
    b_arg = int(np.argmin(bound))
    guarantee_ok = bool(np.all(measured <= bound + 1e-9))
    at_opt_ratio = measured[nearest] / t_eps if np.isfinite(measured[nearest]) else math.inf
    budget = float(p["factor_budget"])
    at_opt_ok = (1.0 / budget) <= at_opt_ratio <= budget
    bound_min_adjacent = abs(b_arg - nearest) <= 1
    k1_star = k1_constant(c, f.mu, t_min, dstar)
    k1_star_ok = abs(k1_star - math.exp(-2.0)) <= 1e-12

    summary = {
        "config": config,
        "constants": {
            "delta_t_star": dstar,
            "t_eps_estimate": t_eps,
            "initial_gap": gap0,
            "k1_at_delta_t_star": k1_star,
        },
        "checks": {
            "measured_within_certified_time": guarantee_ok,
            "time_at_optimal_period_within_factor": at_opt_ok,
            "certified_minimizer_adjacent_to_formula": bound_min_adjacent,
            "k1_at_star_is_e_minus_2": k1_star_ok,
        },
        # raw observations, not gated: the measured minimizer of a single
        # smooth cost sits at a resonance of the restart map (the flow's
        # first zero crossing), below the period that minimizes the
        # certified time; both are reported for comparison.
        "results": {
            "grid": [float(v) for v in grid],
            "measured_argmin_index": m_arg,
            "measured_argmin_delta_t": float(grid[m_arg]),
            "measured_optimum_t": measured[m_arg] if np.isfinite(measured[m_arg]) else None,
            "certified_argmin_index": b_arg,
            "nearest_index_to_delta_t_star": nearest,
            "measured_argmin_adjacent_to_star": bool(abs(m_arg - nearest) <= 1),
            "measured_optimum_over_t_eps": (measured[m_arg] / t_eps
                                            if np.isfinite(measured[m_arg]) else None),
            "time_at_nearest_over_t_eps": (at_opt_ratio if np.isfinite(at_opt_ratio) else None),
        },
        "artifacts": ["sweep.csv", "summary.json", "plot.gp"],
    }
    plot = (_gnuplot_header("restart period sweep: measured vs certified time")
            + "set logscale x\nset xlabel 'restart period'\nset ylabel 'time to eps'\n"
            + "plot 'sweep.csv' using 2:4 with linespoints title 'measured', \\\n"
              "     'sweep.csv' using 2:6 with linespoints title 'certified'\n")
    return _finish(out_dir, summary, plot, quiet)


def _run_discretization_order(config: dict, out_dir: str, quiet: bool) -> int:
    _, f = _cost_from(config)
    hp = _hand_from(config["hand"])
    p = config["params"]
    flow = make_hand_flow(hp.c, f)
    probe = flow_only_system(flow, f.dim, meta={"kind": "order-probe"})
    z0 = _hand_z0(f, _x_offset(f, p["x0"]), hp.t_min)
    period = hp.t_max - hp.t_min
    ref_factor = int(p["ref_factor"])

    def final_state(h: float, integ: str) -> np.ndarray:
        cfg = SolverConfig(h=h, t_end=period, max_jumps=1, integrator=integ,
                           record_stride=2 ** 62)
        return simulate(probe, z0, cfg).zs[-1]

    h_grid = [2.0 ** (-k) for k in range(int(p["k_min"]), int(p["k_max"]) + 1)]
    order_rows = []
    fitted = {}
    for integ in ("euler", "rk4"):
        errs = []
        for h in h_grid:
            zh = final_state(h, integ)
            zr = final_state(h / ref_factor, integ)
            err = float(np.linalg.norm(zh[:2 * f.dim] - zr[:2 * f.dim]))
            errs.append(err)
            order_rows.append([integ, h, err])
        slope = float(np.polyfit(np.log(h_grid), np.log(errs), 1)[0])
        fitted[integ] = slope
        if not quiet:
            print("  %s: fitted order %.3f" % (integ, slope))
    write_table_csv(os.path.join(out_dir, "orders.csv"),
                    ["scheme", "h", "global_error"], order_rows)
    lo_e, hi_e = (float(v) for v in p["euler_order"])
    lo_r, hi_r = (float(v) for v in p["rk4_order"])
    euler_ok = lo_e <= fitted["euler"] <= hi_e
    rk4_ok = lo_r <= fitted["rk4"] <= hi_r

    # stability part: the exponential-rate and energy checks of the
    # restarting run must keep passing for every step below the largest
    # passing one
    sys2 = hand2(f, hp)
    stab_rows = []
    pass_h = {}
    for integ in ("euler", "rk4"):
        for h in h_grid:
            cfg = SolverConfig(h=h, t_end=float(config["solver"]["t_end"]),
                               max_jumps=int(config["solver"]["max_jumps"]),
                               integrator=integ, jump_policy="latest",
                               record_stride=max(1, int(round(0.01 / h))))
            trace = simulate(sys2, z0, cfg)
            rep = check_exponential_rate(trace, f, hp, tol=float(p["tol"]))
            con = check_period_contraction(trace, f, hp, slack=float(p["contraction_slack"]))
            mono = check_monotonicity(trace, f, hp.c,
                                      slack_per_step=float(p["mono_slack_scale"]) * f.lipschitz * h)
            worst_rel = 0.0
            for rec in trace.events:
                dv_sim = lyapunov(rec.z_post, f, hp.c) - lyapunov(rec.z_pre, f, hp.c)
                dv_form = jump_decrease_hand2(rec.z_pre, f, hp)
                if abs(dv_form) > 1e-300:
                    worst_rel = max(worst_rel, abs(dv_sim - dv_form) / abs(dv_form))
            ok = (rep.satisfied and con.satisfied and mono.satisfied
                  and worst_rel <= float(p["closed_form_tol"]))
            pass_h[(integ, h)] = ok
            stab_rows.append([integ, h, rep.satisfied, con.satisfied, mono.satisfied,
                              worst_rel, ok])
    write_table_csv(os.path.join(out_dir, "stability.csv"),
                    ["scheme", "h", "rate_ok", "contraction_ok", "monotone_ok",
                     "jump_identity_rel_err", "all_ok"], stab_rows)
    largest = None
    for h in h_grid:  # descending
        if pass_h[("euler", h)] and pass_h[("rk4", h)]:
            largest = h
            break
    below_all_pass = largest is not None and all(
        pass_h[(integ, h)] for integ in ("euler", "rk4") for h in h_grid if h < largest)

    summary = {
        "config": config,
        "results": {
            "fitted_order": fitted,
            "h_grid": h_grid,
            "largest_passing_h": largest,
        },
        "checks": {
            "euler_order_near_one": euler_ok,
            "rk4_order_near_four": rk4_ok,
            "stability_for_all_smaller_h": bool(below_all_pass),
        },
        "artifacts": ["orders.csv", "stability.csv", "summary.json", "plot.gp"],
    }
    plot = (_gnuplot_header("global error over one flow period")
            + "set logscale xy\nset xlabel 'step size h'\nset ylabel 'error at period end'\n"
            + "plot '< grep euler orders.csv' using 2:3 with linespoints title 'euler', \\\n"
              "     '< grep rk4 orders.csv' using 2:3 with linespoints title 'rk4'\n")
    return _finish(out_dir, summary, plot, quiet)


def _run_robustness_margin(config: dict, out_dir: str, quiet: bool) -> int:
    _, f = _cost_from(config)
    hp = _hand_from(config["hand"])
    p = config["params"]
    base = config["disturbance"]
    if base["kind"] == "zero":
        raise ConfigError("disturbance.kind: the margin bisection needs a non-zero disturbance shape")
    delta = float(p["delta"])
    settle = float(p["settle"])
    sys = hand2(f, hp)
    z0 = _hand_z0(f, _x_offset(f, p["x0"]), hp.t_min)
    dist_fn = target_distance_fn(f, hp)
    cfg = _solver_from(config["solver"])

    def worst_dist(amp: float) -> float:
        sec = dict(base)
        sec["eps"] = amp
        spec, channel = _disturbance_from(sec, f.dim)
        trace = simulate(sys, z0, cfg, _perturbation(spec, channel))
        if trace.termination != "horizon":
            return math.inf
        vals = [dist_fn(trace.zs[k]) for k in range(len(trace.ts)) if trace.ts[k] >= settle]
        return max(vals) if vals else math.inf

    eps_lo = float(p["eps_lo"])
    eps_hi = float(p["eps_hi"])
    rows = []
    d_lo = worst_dist(eps_lo)
    rows.append([eps_lo, d_lo, d_lo <= delta])
    if d_lo > delta:
        lo, hi = 0.0, eps_lo
    else:
        d_hi = worst_dist(eps_hi)
        rows.append([eps_hi, d_hi, d_hi <= delta])
        if d_hi <= delta:
            lo, hi = eps_hi, math.inf
        else:
            lo, hi = eps_lo, eps_hi
            for _ in range(int(p["bisect_steps"])):
                mid = math.sqrt(lo * hi)
                d_mid = worst_dist(mid)
                rows.append([mid, d_mid, d_mid <= delta])
                if d_mid <= delta:
                    lo = mid
                else:
                    hi = mid
    rows.sort(key=lambda r: r[0])
    write_table_csv(os.path.join(out_dir, "bisection.csv"),
                    ["amplitude", "worst_distance", "bounded"], rows)
    margin_ok = lo >= eps_lo
    summary = {
        "config": config,
        "results": {
            "margin_lower": lo if math.isfinite(lo) else None,
            "margin_upper": hi if math.isfinite(hi) else None,
            "h": cfg.h,
            "horizon": cfg.t_end,
            "evaluations": len(rows),
        },
        "checks": {"positive_margin": bool(margin_ok)},
        "artifacts": ["bisection.csv", "summary.json", "plot.gp"],
    }
    if not quiet:
        print("  margin bracket: [%.6g, %s] (threshold %.3g on distance after t=%g)"
              % (lo, "%.6g" % hi if math.isfinite(hi) else "open", delta, settle))
    plot = (_gnuplot_header("empirical disturbance margin")
            + "set logscale xy\nset xlabel 'disturbance amplitude'\nset ylabel 'worst distance'\n"
            + "delta=%s\n" % format_float(delta)
            + "plot 'bisection.csv' using 1:2 with points pt 7 title 'runs', \\\n"
              "     delta with lines dashtype 2 title 'threshold'\n")
    return _finish(out_dir, summary, plot, quiet)


_RUNNERS = {
    "instability": _run_instability,
    "uniformity-probe": _run_uniformity,
    "hand1-rate": _run_hand1_rate,
    "hand2-rate": _run_hand2_rate,
    "restart-sweep": _run_restart_sweep,
    "discretization-order": _run_discretization_order,
    "robustness-margin": _run_robustness_margin,
}


def run_scenario(config: dict, out_dir: Optional[str] = None, quiet: bool = False) -> int:
    """Run one resolved scenario config; writes artifacts, returns the exit
    status (0 all checks pass, 1 otherwise)."""
    config = parse_config(config)
    out = out_dir if out_dir is not None else config["out_dir"]
    os.makedirs(out, exist_ok=True)
    if not quiet:
        print("scenario %s -> %s" % (config["scenario"], out))
    return _RUNNERS[config["scenario"]](config, out, quiet)
