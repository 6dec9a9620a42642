"""Simulation and ergodic-control toolkit for a two-class, two-pool queueing
network in the critically-loaded many-server regime.

Modules
-------
model             parameter validation, fluid solution, scaling embeddings
policies          scheduling rules, action sets, work-conserving geometry
ctmc_sim          event-driven simulation and cost estimation
diffusion         limiting-diffusion drift, running costs, Euler-Maruyama
hjb_solver        ergodic HJB equations on a truncated grid, constrained modes
mdp_oracle        exact average-cost optimality on a truncated state box
lyapunov_verifier stability drift inequalities, prelimit and limiting
config            INI experiment configuration with includes
cli               command-line entry points
"""
from .config import ExperimentConfig, VerifySettings, load_config
from .ctmc_sim import (
    CostEstimate,
    TrajectoryStats,
    empirical_moments,
    estimate_costs,
    simulate,
    simulate_replicates,
)
from .diffusion import DriftData
from .hjb_solver import (
    Grid,
    Multipliers,
    PolicyField,
    SolveReport,
    ValueField,
    extract_markov_control,
    policy_iteration,
    solve_constrained,
    solve_fairness,
    stationary_distribution,
)
from .lyapunov_verifier import (
    DriftReport,
    bar_beta,
    verify_diffusion_drift,
    verify_induced_drift,
    verify_sdp_drift,
)
from .mdp_oracle import (
    LookupPolicy,
    OracleSolution,
    TruncatedChain,
    build_chain,
    default_box,
    enumerate_actions,
    load_policy_csv,
    oracle_curve,
    policy_table,
    relative_value_iteration,
    save_policy_csv,
    stationary_average,
)
from .model import (
    ControlVector,
    CostSpec,
    FluidSolution,
    LimitParams,
    SystemInstance,
    diffusion_scale,
    fluid_solution,
    instantiate,
    validate_limit_params,
)
from .policies import (
    MarkovControlField,
    ScheduleDecision,
    concatenated_schedule,
    default_ball_fraction,
    in_action_set,
    induced_schedule,
    jwc_ball_fraction,
    jwc_holds,
    sdp_schedule,
)

__all__ = [
    "ControlVector",
    "CostEstimate",
    "CostSpec",
    "DriftData",
    "DriftReport",
    "ExperimentConfig",
    "FluidSolution",
    "Grid",
    "LimitParams",
    "LookupPolicy",
    "MarkovControlField",
    "Multipliers",
    "OracleSolution",
    "PolicyField",
    "ScheduleDecision",
    "SolveReport",
    "SystemInstance",
    "TrajectoryStats",
    "TruncatedChain",
    "ValueField",
    "VerifySettings",
    "bar_beta",
    "build_chain",
    "concatenated_schedule",
    "default_ball_fraction",
    "default_box",
    "diffusion_scale",
    "empirical_moments",
    "enumerate_actions",
    "estimate_costs",
    "extract_markov_control",
    "fluid_solution",
    "in_action_set",
    "induced_schedule",
    "instantiate",
    "jwc_ball_fraction",
    "jwc_holds",
    "load_config",
    "load_policy_csv",
    "oracle_curve",
    "policy_iteration",
    "policy_table",
    "relative_value_iteration",
    "save_policy_csv",
    "sdp_schedule",
    "simulate",
    "simulate_replicates",
    "solve_constrained",
    "solve_fairness",
    "stationary_average",
    "stationary_distribution",
    "validate_limit_params",
]

__version__ = "0.1.0"
