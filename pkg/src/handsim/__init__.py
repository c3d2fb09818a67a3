"""Simulation library and experiment CLI for timer-based restarting
regularizations of the accelerated-gradient ODE."""

from .core import (
    CostFunction,
    HybridState,
    HybridTime,
    SolverConfig,
    Trace,
    aniso_cost,
    corpus,
    coupled_cost,
    example1_cost,
    grad_check,
    make_quadratic,
    sphere_cost,
    validate_trace,
)
from .dynamics import (
    DisturbanceSpec,
    OdeParams,
    hand_flow,
    limiting_integral,
    nominal_flow_rep1,
    nominal_flow_rep2,
    perturbed_flow,
    signal_eval,
)
from .engine import (
    ButcherTableau,
    HybridSystem,
    PerturbationSet,
    dh_membership,
    euler_step,
    jump_policy_decide,
    rk_step,
    simulate,
    tableau,
)
from .hands import (
    HandParams,
    hand1,
    hand2,
    strong_dwell,
    target_distance,
    target_distance_fn,
    validate_dwell,
)
from .analysis import (
    RateReport,
    beta_constant,
    check_monotonicity,
    check_inverse_square_rate,
    check_period_contraction,
    check_exponential_rate,
    convergence_time_estimate,
    flow_derivative,
    hand1_phase_probe,
    jump_decrease_hand1,
    jump_decrease_hand2,
    k0_constant,
    k1_constant,
    lyapunov,
    lyapunov_curve,
    optimal_restart,
    time_to_epsilon,
    uniformity_probe,
)
from .io import read_summary_json, read_trace_csv, write_summary_json, write_trace_csv
from .scenarios import (
    SCENARIOS,
    ConfigError,
    default_config,
    parse_config,
    run_scenario,
)

__version__ = "0.1.0"
