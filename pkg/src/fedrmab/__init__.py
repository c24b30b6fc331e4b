"""Federated Thompson-sampling Whittle-index simulator for restless
multi-channel access bandits."""

from .bayes import (
    AgentWeights,
    BetaPosterior,
    TransitionCounts,
    aggregate,
    posterior_mean,
    record_transition,
    sample_dynamics,
    ucb_dynamics,
)
from .belief import crossing_time, k_step, propagate, stationary_belief, update_observed
from .config import ExperimentConfig, MetricsRecord, benchmark_arms
from .env import ArmConfig, Environment, GilbertElliotDynamics, Observation, new_environment
from .fedtswi import (
    AgentState,
    EpisodeState,
    Policy,
    make_policy,
    run_agent_episode,
    run_experiment,
    select_arms,
    server_round,
)
from .harness import (
    brute_force_optimal,
    compute_mse,
    compute_regret,
    episode_count_bound,
    estimate_reference_reward,
    policy_expected_value,
    run_monte_carlo,
    write_csv,
)
from .whittle import (
    BeliefChain,
    SingleArmSolution,
    SubsidyProblem,
    build_belief_chain,
    solve_subsidy,
    verify_indexability,
    whittle_closed,
    whittle_numeric,
)

__all__ = [
    "AgentState",
    "AgentWeights",
    "ArmConfig",
    "BeliefChain",
    "BetaPosterior",
    "Environment",
    "EpisodeState",
    "ExperimentConfig",
    "GilbertElliotDynamics",
    "MetricsRecord",
    "Observation",
    "Policy",
    "SingleArmSolution",
    "SubsidyProblem",
    "TransitionCounts",
    "aggregate",
    "benchmark_arms",
    "brute_force_optimal",
    "build_belief_chain",
    "compute_mse",
    "compute_regret",
    "crossing_time",
    "episode_count_bound",
    "estimate_reference_reward",
    "k_step",
    "make_policy",
    "new_environment",
    "policy_expected_value",
    "posterior_mean",
    "propagate",
    "record_transition",
    "run_agent_episode",
    "run_experiment",
    "run_monte_carlo",
    "sample_dynamics",
    "select_arms",
    "server_round",
    "solve_subsidy",
    "stationary_belief",
    "ucb_dynamics",
    "update_observed",
    "verify_indexability",
    "whittle_closed",
    "whittle_numeric",
    "write_csv",
]

__version__ = "0.1.0"
