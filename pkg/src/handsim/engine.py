"""Fixed-step simulation of hybrid systems (flow map, jump map, flow set,
jump set) with explicit Runge-Kutta integrators.

Discretization of the jump set follows the regularization

    D_h = D union { z : z = one flow step from some y in C, z not in C }

realized by provenance tagging: the loop knows whether the current state was
produced by a flow step from inside C, so overshoot states trigger jumps even
when D itself is a measure-zero slice (exact timer deadlines). States in
C intersect D are resolved by a jump policy; "escaped hybrid domain" and
"numerical blow-up" are first-class recorded outcomes, not exceptions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (
    TAG_FAULT,
    TAG_FLOW,
    TAG_JUMP,
    FaultRecord,
    JumpRecord,
    SolverConfig,
    Trace,
)
from .dynamics import DisturbanceSpec, make_signal

__all__ = [
    "ButcherTableau",
    "TABLEAUS",
    "tableau",
    "HybridSystem",
    "PerturbationSet",
    "flow_only_system",
    "euler_step",
    "rk_step",
    "dh_membership",
    "jump_policy_decide",
    "simulate",
]


@dataclass(frozen=True)
class ButcherTableau:
    """Explicit Runge-Kutta tableau: a is strictly lower triangular (row k
    holds the k coefficients against earlier stages), weights b sum to 1."""

    label: str
    a: tuple
    b: tuple

    def __post_init__(self):
        a = tuple(tuple(float(v) for v in row) for row in self.a)
        b = tuple(float(v) for v in self.b)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if len(a) != len(b):
            raise ValueError("need one a-row per stage: %d rows, %d weights" % (len(a), len(b)))
        for k, row in enumerate(a):
            if len(row) != k:
                raise ValueError("stage %d must have %d coefficients, got %d (explicit methods only)" % (k, k, len(row)))
        if abs(math.fsum(b) - 1.0) > 1e-12:
            raise ValueError("stage weights must sum to 1, got %r" % (math.fsum(b),))

    @property
    def stages(self) -> int:
        return len(self.b)


TABLEAUS = {
    "euler": ButcherTableau("euler", a=((),), b=(1.0,)),
    "heun": ButcherTableau("heun", a=((), (1.0,)), b=(0.5, 0.5)),
    "midpoint": ButcherTableau("midpoint", a=((), (0.5,)), b=(0.0, 1.0)),
    "rk4": ButcherTableau(
        "rk4",
        a=((), (0.5,), (0.0, 0.5), (0.0, 0.0, 1.0)),
        b=(1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0),
    ),
}


def tableau(name: str) -> ButcherTableau:
    try:
        return TABLEAUS[name]
    except KeyError:
        raise ValueError("unknown tableau %r (known: %s)" % (name, ", ".join(sorted(TABLEAUS)))) from None


@dataclass
class HybridSystem:
    """Hybrid system on packed states z = [x1, x2, tau] of length 2*dim + 1.

    F(z, out) writes the flow field; G(z) returns the post-jump state;
    in_C(z, inflation) / in_D(z, inflation) test set membership, where
    inflation >= 0 widens the timer bounds (used to realize membership
    perturbations). meta carries timer bounds and labels for policies,
    reporting, and fast paths ("empty_jump_set" marks D = empty).
    """

    dim: int
    F: Callable[[np.ndarray, np.ndarray], None]
    G: Callable[[np.ndarray], np.ndarray]
    in_C: Callable[[np.ndarray, float], bool]
    in_D: Callable[[np.ndarray, float], bool]
    meta: dict = field(default_factory=dict)

    @property
    def packed_len(self) -> int:
        return 2 * self.dim + 1


def flow_only_system(flow: Callable, dim: int, meta: Optional[dict] = None) -> HybridSystem:
    """Wrap a pure flow as a hybrid system with empty jump set (C = everything)."""
    m = dict(meta or {})
    m["empty_jump_set"] = True
    return HybridSystem(
        dim=dim,
        F=flow,
        G=lambda z: z.copy(),
        in_C=lambda z, inflation=0.0: True,
        in_D=lambda z, inflation=0.0: False,
        meta=m,
    )


@dataclass(frozen=True)
class PerturbationSet:
    """The six disturbance channels of the perturbed hybrid system:

    e1 flow-state, e2 flow-dynamics, e3 flow-set membership, e4 jump-state,
    e5 jump-output, e6 jump-set membership. None means zero. All signals are
    dimensioned to the packed state (2*dim + 1); membership channels act
    through their norm as timer-interval inflation.
    """

    e1: Optional[DisturbanceSpec] = None
    e2: Optional[DisturbanceSpec] = None
    e3: Optional[DisturbanceSpec] = None
    e4: Optional[DisturbanceSpec] = None
    e5: Optional[DisturbanceSpec] = None
    e6: Optional[DisturbanceSpec] = None

    def channels(self):
        return (self.e1, self.e2, self.e3, self.e4, self.e5, self.e6)

    def any_active(self) -> bool:
        return any(e is not None and not e.is_zero() for e in self.channels())


def euler_step(F: Callable, z: np.ndarray, h: float) -> np.ndarray:
    """One explicit Euler step z + h F(z); faults on non-finite output."""
    z = np.asarray(z, dtype=float)
    dz = np.empty_like(z)
    F(z, dz)
    out = z + h * dz
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("euler step produced non-finite state at |z|=%g" % float(np.abs(z).max()))
    return out


def rk_step(F: Callable, z: np.ndarray, h: float, tab: ButcherTableau) -> np.ndarray:
    """One explicit Runge-Kutta step with stages evaluated in tableau order."""
    z = np.asarray(z, dtype=float)
    m = z.shape[0]
    s = tab.stages
    K = np.empty((s, m))
    g = np.empty(m)
    for k in range(s):
        if k == 0:
            F(z, K[0])
            continue
        g[:] = 0.0
        for j, akj in enumerate(tab.a[k]):
            if akj != 0.0:
                g += akj * K[j]
        g *= h
        g += z
        F(g, K[k])
    dz = np.zeros(m)
    for k in range(s):
        if tab.b[k] != 0.0:
            dz += tab.b[k] * K[k]
    out = z + h * dz
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("rk step produced non-finite state at |z|=%g" % float(np.abs(z).max()))
    return out


def dh_membership(sys: HybridSystem, z: np.ndarray, from_flow_step: bool = False,
                  inflation_c: float = 0.0, inflation_d: float = 0.0) -> bool:
    """Membership in the discretized jump set D_h.

    True iff z is in D, or z carries flow-step provenance (it was produced by
    one integrator step from a state inside C) and has left C. The provenance
    flag is how the simulation loop realizes the one-step-overshoot part of
    D_h without inverting the step map.
    """
    if sys.in_D(z, inflation_d):
        return True
    return from_flow_step and not sys.in_C(z, inflation_c)


def jump_policy_decide(policy: str, z: np.ndarray, sys: HybridSystem, h: float,
                       rng: Optional[np.random.Generator] = None,
                       flow_exits: Optional[bool] = None) -> bool:
    """Resolve flow-vs-jump for a state in C intersect D.

    earliest: jump immediately. latest: flow until flowing would leave C
    (flow_exits supplies that lookahead). uniform: jump with probability
    q = h / (t_max - tau + h), which lands the jump uniformly over the
    remaining timer window; needs timer bounds in sys.meta and an rng.
    """
    if policy == "earliest":
        return True
    if policy == "latest":
        if flow_exits is None:
            raise ValueError("latest policy needs the flow_exits lookahead")
        return flow_exits
    if policy == "uniform":
        t_max = sys.meta.get("t_max")
        if t_max is None:
            raise ValueError("uniform policy needs timer bounds in sys.meta['t_max']")
        if rng is None:
            raise ValueError("uniform policy needs an rng")
        tau = float(z[-1])
        q = h / (t_max - tau + h)
        return bool(rng.random() < q)
    raise ValueError("unknown jump policy %r" % (policy,))


def _signal_or_none(spec: Optional[DisturbanceSpec], m: int, name: str):
    if spec is None or spec.is_zero():
        return None
    if spec.dim != m:
        raise ValueError("perturbation %s has dim %d, packed state needs %d" % (name, spec.dim, m))
    return make_signal(spec)


def simulate(sys: HybridSystem, z0, cfg: SolverConfig,
             pert: Optional[PerturbationSet] = None,
             stop_condition: Optional[Callable[[float, int, np.ndarray], bool]] = None) -> Trace:
    """Run the hybrid simulation loop and return the recorded Trace.

    Each loop iteration does exactly one of: a jump z+ = G(z + e4) + e5 when
    the (perturbed) discretized jump set is hit and the policy elects it, or
    one integrator step of dz = F(z + e1) + e2 advancing t by h. Jumps never
    advance t, flow steps never advance j. Disturbance signals are evaluated
    at the step-start time and held constant over the step.

    Recording: the initial state, every record_stride-th flow step, both
    sides of every jump, and the final state. stop_condition(t, j, z) is
    evaluated at recorded points only; when it fires the run terminates with
    reason "condition". Other termination reasons: "horizon", "jump_cap"
    (the next required jump would exceed max_jumps; the pre-jump state is the
    final sample), "fault" (non-finite state, or state outside C union D_h
    with the fault kind and last finite state kept on the trace).
    """
    m = sys.packed_len
    z = np.array(z0, dtype=float).reshape(m).copy()
    if not np.all(np.isfinite(z)):
        raise ValueError("initial state must be finite")
    h = cfg.h
    t_end = cfg.t_end
    max_jumps = cfg.max_jumps
    stride = cfg.record_stride
    empty_jump_set = bool(sys.meta.get("empty_jump_set", False))

    pert = pert or PerturbationSet()
    sig1 = _signal_or_none(pert.e1, m, "e1")
    sig2 = _signal_or_none(pert.e2, m, "e2")
    sig3 = _signal_or_none(pert.e3, m, "e3")
    sig4 = _signal_or_none(pert.e4, m, "e4")
    sig5 = _signal_or_none(pert.e5, m, "e5")
    sig6 = _signal_or_none(pert.e6, m, "e6")

    in_C = sys.in_C
    in_D = sys.in_D
    F = sys.F
    G = sys.G
    policy = cfg.jump_policy
    rng = np.random.default_rng(cfg.policy_seed) if policy == "uniform" else None

    tab = TABLEAUS[cfg.integrator]
    s = tab.stages
    a_rows = [np.asarray(row) for row in tab.a]
    b_w = tab.b
    K = np.empty((s, m))
    gbuf = np.empty(m)
    dz = np.empty(m)
    zin = np.empty(m)
    scratch = np.empty(m)
    euler = cfg.integrator == "euler"

    def infl(sig, t):
        return float(np.linalg.norm(sig(t))) if sig is not None else 0.0

    # initial state must sit in the (inflated) hybrid domain
    if not empty_jump_set:
        if not (in_C(z, infl(sig3, 0.0)) or in_D(z, infl(sig6, 0.0))):
            raise ValueError("initial state outside C union D (tau=%g)" % float(z[-1]))

    ts: list = []
    js: list = []
    zs: list = []
    tags: list = []
    events: list = []
    fault: Optional[FaultRecord] = None
    termination = "horizon"

    stop_hit = False

    def record(t, j, zarr, tag):
        ts.append(t)
        js.append(j)
        zs.append(zarr.copy())
        tags.append(tag)

    def flow_field(t, zcur, out):
        """out = F(zcur + e1(t)) + e2(t) via one integrator step increment."""
        nonlocal gbuf
        if sig1 is not None:
            np.add(zcur, sig1(t), out=zin)
            src = zin
        else:
            src = zcur
        if euler:
            F(src, out)
        else:
            F(src, K[0])
            for k in range(1, s):
                row = a_rows[k]
                gbuf[:] = 0.0
                for jj in range(k):
                    akj = row[jj]
                    if akj != 0.0:
                        np.multiply(K[jj], akj, out=scratch)
                        gbuf += scratch
                gbuf *= h
                gbuf += src
                F(gbuf, K[k])
            np.multiply(K[0], b_w[0], out=out)
            for k in range(1, s):
                if b_w[k] != 0.0:
                    np.multiply(K[k], b_w[k], out=scratch)
                    out += scratch
        if sig2 is not None:
            out += sig2(t)

    record(0.0, 0, z, TAG_FLOW)
    if stop_condition is not None and stop_condition(0.0, 0, z):
        stop_hit = True

    k_step = 0
    j = 0
    t = 0.0
    from_flow = False
    since_record = 0

    eps_t = 1e-12 * max(1.0, t_end)
    while not stop_hit:
        if t >= t_end - eps_t:
            termination = "horizon"
            break

        do_jump = False
        trial_ready = False
        if not empty_jump_set:
            i3 = float(np.linalg.norm(sig3(t))) if sig3 is not None else 0.0
            i6 = float(np.linalg.norm(sig6(t))) if sig6 is not None else 0.0
            c_now = in_C(z, i3)
            d_now = in_D(z, i6) or (from_flow and not c_now)
            if d_now:
                if not c_now:
                    do_jump = True
                elif policy == "latest":
                    # lookahead: jump only if the flow step would leave C
                    flow_field(t, z, dz)
                    np.multiply(dz, h, out=scratch)
                    np.add(z, scratch, out=gbuf)
                    trial_exits = not in_C(gbuf, i3)
                    do_jump = jump_policy_decide(policy, z, sys, h, flow_exits=trial_exits)
                    trial_ready = not do_jump
                else:
                    do_jump = jump_policy_decide(policy, z, sys, h, rng=rng)
            elif not c_now:
                fault = FaultRecord(t, j, "escaped", "state outside C union D_h (tau=%g)" % float(z[-1]), z.copy())
                termination = "fault"
                break

        if do_jump:
            # budget gates jumps, not flow: stop when one more jump would
            # exceed it, recording the pre-jump state as the final sample
            if j >= max_jumps:
                termination = "jump_cap"
                break
            if since_record > 0:
                if not np.all(np.isfinite(z)):
                    fault = FaultRecord(t, j, "blowup", "non-finite state before jump", zs[-1].copy())
                    termination = "fault"
                    break
                record(t, j, z, TAG_FLOW)
                since_record = 0
            if sig4 is not None:
                np.add(z, sig4(t), out=zin)
                z_pre_eff = zin
            else:
                z_pre_eff = z
            z_post = np.array(G(z_pre_eff), dtype=float).reshape(m)
            if sig5 is not None:
                z_post = z_post + sig5(t)
            if not np.all(np.isfinite(z_post)):
                fault = FaultRecord(t, j, "blowup", "jump map produced non-finite state", z.copy())
                termination = "fault"
                break
            events.append(JumpRecord(t, j, z.copy(), z_post.copy()))
            j += 1
            z = z_post
            from_flow = False
            record(t, j, z, TAG_JUMP)
            since_record = 0
            if not (in_C(z, infl(sig3, t)) or in_D(z, infl(sig6, t))):
                fault = FaultRecord(t, j, "escaped", "jump landed outside C union D (tau=%g)" % float(z[-1]), z.copy())
                termination = "fault"
                break
            if stop_condition is not None and stop_condition(t, j, z):
                stop_hit = True
            continue

        # one flow step
        if trial_ready:
            z, gbuf = gbuf, z  # trial step already computed into gbuf
        else:
            flow_field(t, z, dz)
            np.multiply(dz, h, out=scratch)
            z += scratch
        k_step += 1
        t = k_step * h
        from_flow = True
        since_record += 1
        if not math.isfinite(z[0]):
            fault = FaultRecord(t, j, "blowup", "non-finite state during flow at t=%g" % t, zs[-1].copy())
            termination = "fault"
            break
        if since_record >= stride:
            if not np.all(np.isfinite(z)):
                fault = FaultRecord(t, j, "blowup", "non-finite state during flow at t=%g" % t, zs[-1].copy())
                termination = "fault"
                break
            record(t, j, z, TAG_FLOW)
            since_record = 0
            if stop_condition is not None and stop_condition(t, j, z):
                stop_hit = True

    if stop_hit:
        termination = "condition"

    if termination == "fault":
        record(fault.t, fault.j, fault.z_last, TAG_FAULT)
    elif since_record > 0:
        if np.all(np.isfinite(z)):
            record(t, j, z, TAG_FLOW)
        else:
            fault = FaultRecord(t, j, "blowup", "non-finite state at horizon", zs[-1].copy())
            termination = "fault"
            record(fault.t, fault.j, fault.z_last, TAG_FAULT)

    meta = dict(sys.meta)
    meta.update(
        h=h,
        t_end=t_end,
        max_jumps=max_jumps,
        integrator=cfg.integrator,
        jump_policy=cfg.jump_policy,
        policy_seed=cfg.policy_seed,
        record_stride=stride,
        dim=sys.dim,
        flow_steps=k_step,
    )
    return Trace(
        dim=sys.dim,
        ts=np.asarray(ts, dtype=float),
        js=np.asarray(js, dtype=np.int64),
        zs=np.asarray(zs, dtype=float),
        tags=np.asarray(tags, dtype=np.int8),
        events=events,
        meta=meta,
        termination=termination,
        fault=fault,
    )
