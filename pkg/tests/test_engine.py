"""Integrator steps, jump handling, and the hybrid simulation loop."""

import math

import numpy as np
import pytest

from handsim import (
    DisturbanceSpec,
    HandParams,
    PerturbationSet,
    SolverConfig,
    dh_membership,
    euler_step,
    hand2,
    jump_policy_decide,
    rk_step,
    simulate,
    sphere_cost,
    tableau,
    validate_trace,
)
from handsim.core import TAG_JUMP
from handsim.dynamics import make_hand_flow
from handsim.engine import flow_only_system
from handsim.hands import hand1


def test_euler_step_hand_values():
    f = sphere_cost(1)
    F = make_hand_flow(1.0, f)
    z1 = euler_step(F, np.array([1.0, 3.0, 2.0]), 0.1)
    assert np.allclose(z1, [1.2, 2.6, 2.1], atol=1e-14)


def test_euler_step_zero_field():
    def F(z, out):
        out[:] = 0.0

    z = np.array([2.0, -1.0, 0.5])
    assert np.array_equal(euler_step(F, z, 0.3), z)


def test_euler_step_faults_on_nonfinite():
    def F(z, out):
        out[:] = math.inf

    with pytest.raises(FloatingPointError):
        euler_step(F, np.zeros(2), 0.1)


def test_euler_half_steps_differ_second_order():
    # two h/2 steps vs one h step on a linear field: gap scales like h^2
    rng = np.random.default_rng(13)
    A = rng.standard_normal((3, 3))

    def F(z, out):
        out[:] = A @ z

    z0 = rng.standard_normal(3)
    gaps = []
    for h in (0.1, 0.05, 0.025):
        one = euler_step(F, z0, h)
        two = euler_step(F, euler_step(F, z0, h / 2), h / 2)
        gaps.append(float(np.linalg.norm(one - two)))
    # halving h shrinks the gap by ~4
    assert gaps[0] / gaps[1] == pytest.approx(4.0, rel=0.15)
    assert gaps[1] / gaps[2] == pytest.approx(4.0, rel=0.15)


def test_degenerate_tableau_is_euler():
    tab = tableau("euler")
    assert tab.stages == 1
    f = sphere_cost(1)
    F = make_hand_flow(1.0, f)
    rng = np.random.default_rng(2)
    for _ in range(20):
        z = rng.standard_normal(3)
        z[-1] = abs(z[-1]) + 0.1
        assert np.allclose(rk_step(F, z, 0.05, tab), euler_step(F, z, 0.05), atol=1e-15)


def test_rk4_exponential_value():
    # zdot = z from 1 over one step h=0.1 matches the truncated Taylor value
    def F(z, out):
        out[:] = z

    z1 = rk_step(F, np.array([1.0]), 0.1, tableau("rk4"))
    assert z1[0] == pytest.approx(1.1051708333333332, abs=1e-12)
    # local truncation error h^5/5! ~ 8.3e-8
    assert abs(z1[0] - math.exp(0.1)) < 1e-7


def test_rk4_global_error_fourth_order():
    # Richardson on the flow over a fixed horizon: halving h gains ~2^4
    f = sphere_cost(1)
    sys = flow_only_system(make_hand_flow(1.0, f), f.dim)
    z0 = np.array([2.0, 2.0, 1.0])
    ref = simulate(sys, z0, SolverConfig(h=1e-4, t_end=2.0, integrator="rk4", record_stride=10**9)).zs[-1]
    errs = []
    for h in (0.02, 0.01):
        tr = simulate(sys, z0, SolverConfig(h=h, t_end=2.0, integrator="rk4", record_stride=10**9))
        errs.append(float(np.linalg.norm(tr.zs[-1] - ref)))
    assert errs[0] / errs[1] == pytest.approx(16.0, rel=0.3)


def test_unknown_tableau_rejected():
    with pytest.raises(ValueError):
        tableau("rk9")


def test_dh_membership_cases():
    f = sphere_cost(1)
    sys = hand2(f, HandParams(t_min=1.0, t_max=2.0, c=1.0))
    in_D = np.array([0.5, 0.5, 2.0])
    assert dh_membership(sys, in_D) is True
    overshoot = np.array([0.5, 0.5, 2.003])
    # reachable in one flow step from C, outside C: jump fires next
    assert dh_membership(sys, overshoot, from_flow_step=True) is True
    assert dh_membership(sys, overshoot, from_flow_step=False) is False
    interior = np.array([0.5, 0.5, 1.2])
    assert dh_membership(sys, interior, from_flow_step=True) is False


def test_jump_policy_decide_basics():
    f = sphere_cost(1)
    sys = hand1(f, HandParams(t_min=1.0, t_max=3.0, c=1.0, t_med=2.0))
    z = np.array([0.5, 0.5, 2.5])  # inside C and D
    assert jump_policy_decide("earliest", z, sys, 1e-2) is True
    assert jump_policy_decide("latest", z, sys, 1e-2, flow_exits=False) is False
    assert jump_policy_decide("latest", z, sys, 1e-2, flow_exits=True) is True
    with pytest.raises(ValueError):
        jump_policy_decide("latest", z, sys, 1e-2)
    rng = np.random.default_rng(0)
    decisions = [jump_policy_decide("uniform", z, sys, 1e-2, rng=rng) for _ in range(200)]
    assert any(decisions) and not all(decisions)


def test_flow_only_trace_never_jumps():
    f = sphere_cost(1)
    sys = flow_only_system(make_hand_flow(1.0, f), f.dim)
    tr = simulate(sys, np.array([2.0, 2.0, 1.0]), SolverConfig(h=1e-2, t_end=5.0))
    assert np.all(tr.js == 0)
    assert tr.termination == "horizon"
    validate_trace(tr)


def test_hand2_jump_cadence():
    # timer from t_min=1 to t_max=2: jumps at t = 1, 2, 3, ... within h
    f = sphere_cost(1)
    sys = hand2(f, HandParams(t_min=1.0, t_max=2.0, c=1.0))
    cfg = SolverConfig(h=1e-3, t_end=5.5, integrator="rk4", record_stride=100)
    tr = simulate(sys, np.array([5.0, 5.0, 1.0]), cfg)
    jump_times = [rec.t for rec in tr.events]
    assert len(jump_times) == 5
    for k, t in enumerate(jump_times):
        assert abs(t - (k + 1.0)) <= cfg.h + 1e-12
    # j increments by one at each event
    assert [rec.j_pre for rec in tr.events] == [0, 1, 2, 3, 4]
    validate_trace(tr)


def test_zero_perturbation_is_bitwise_identical():
    f = sphere_cost(1)
    sys = hand2(f, HandParams(t_min=1.0, t_max=2.0, c=1.0))
    cfg = SolverConfig(h=1e-2, t_end=4.0, integrator="rk4")
    z0 = np.array([3.0, 3.0, 1.0])
    plain = simulate(sys, z0, cfg)
    pert = PerturbationSet(e2=DisturbanceSpec.zero(3))
    routed = simulate(sys, z0, cfg, pert=pert)
    assert np.array_equal(plain.zs, routed.zs)
    assert np.array_equal(plain.ts, routed.ts)
    assert np.array_equal(plain.js, routed.js)


def test_simulate_is_deterministic_by_seed():
    f = sphere_cost(1)
    sys = hand1(f, HandParams(t_min=1.0, t_max=3.0, c=1.0, t_med=2.0))
    cfg = SolverConfig(h=1e-2, t_end=12.0, jump_policy="uniform", policy_seed=42)
    z0 = np.array([4.0, 4.0, 1.0])
    a = simulate(sys, z0, cfg)
    b = simulate(sys, z0, cfg)
    assert np.array_equal(a.zs, b.zs) and np.array_equal(a.ts, b.ts)
    c = simulate(sys, z0, SolverConfig(h=1e-2, t_end=12.0, jump_policy="uniform", policy_seed=43))
    # different seed moves at least one jump time
    assert len(a.events) > 0 and len(c.events) > 0
    assert a.events[0].t != c.events[0].t


def test_max_jumps_termination():
    f = sphere_cost(1)
    sys = hand2(f, HandParams(t_min=1.0, t_max=2.0, c=1.0))
    cfg = SolverConfig(h=1e-2, t_end=50.0, max_jumps=3)
    tr = simulate(sys, np.array([5.0, 5.0, 1.0]), cfg)
    assert tr.termination == "jump_cap"
    assert len(tr.events) == 3


def test_stop_condition_termination():
    f = sphere_cost(1)
    sys = flow_only_system(make_hand_flow(1.0, f), f.dim)

    def past_two(t, j, z):
        return t >= 2.0

    tr = simulate(sys, np.array([2.0, 2.0, 1.0]), SolverConfig(h=1e-2, t_end=50.0), stop_condition=past_two)
    assert tr.termination == "condition"
    assert 2.0 <= tr.ts[-1] < 2.5


def test_fault_recorded_on_blowup():
    # field grows super-exponentially until the step overflows
    def F(z, out):
        with np.errstate(over="ignore"):
            out[:] = z * np.exp(np.minimum(np.abs(z), 500.0))

    sys = flow_only_system(F, 1)
    tr = simulate(sys, np.array([1.0, 1.0, 1.0]), SolverConfig(h=0.5, t_end=1e3))
    assert tr.termination == "fault"
    assert tr.fault is not None
    assert np.all(np.isfinite(tr.zs))


def test_latest_policy_on_hand1_window():
    # with t_med=2 and t_max=3 the latest policy holds jumps until tau = 3
    f = sphere_cost(1)
    sys = hand1(f, HandParams(t_min=1.0, t_max=3.0, c=1.0, t_med=2.0))
    cfg = SolverConfig(h=1e-3, t_end=9.0, integrator="rk4", jump_policy="latest", record_stride=200)
    tr = simulate(sys, np.array([2.0, 2.0, 1.0]), cfg)
    assert len(tr.events) >= 3
    for rec in tr.events:
        assert rec.z_pre[-1] == pytest.approx(3.0, abs=cfg.h + 1e-9)
        assert rec.z_post[-1] == pytest.approx(1.0, abs=1e-12)


def test_earliest_policy_jumps_at_window_entry():
    f = sphere_cost(1)
    sys = hand1(f, HandParams(t_min=1.0, t_max=3.0, c=1.0, t_med=2.0))
    cfg = SolverConfig(h=1e-3, t_end=9.0, integrator="rk4", jump_policy="earliest", record_stride=200)
    tr = simulate(sys, np.array([2.0, 2.0, 1.0]), cfg)
    assert len(tr.events) >= 3
    for rec in tr.events:
        assert rec.z_pre[-1] == pytest.approx(2.0, abs=cfg.h + 1e-9)


def test_jump_rows_tagged():
    f = sphere_cost(1)
    sys = hand2(f, HandParams(t_min=1.0, t_max=2.0, c=1.0))
    tr = simulate(sys, np.array([5.0, 5.0, 1.0]), SolverConfig(h=1e-2, t_end=3.0))
    jump_rows = np.flatnonzero(tr.tags == TAG_JUMP)
    assert len(jump_rows) == len(tr.events)
    for k in jump_rows:
        assert tr.zs[k, -1] == pytest.approx(1.0, abs=1e-12)  # post-jump timer
