"""Experiment harness: metrics, the exact small-instance oracle,
Monte-Carlo aggregation, and CSV emission.

Trials are independent runs with seeds derived from the master seed by
trial index; aggregation reduces them in trial order so the output is
byte-stable regardless of worker count.
"""

from __future__ import annotations

import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from functools import partial
from itertools import combinations, product
from typing import Callable, Optional, Sequence

import numpy as np

from .belief import propagate
from .config import ExperimentConfig, MetricsRecord
from .env import ArmConfig, GilbertElliotDynamics
from .errors import ConfigError
from .fedtswi import Policy, make_policy, run_experiment

OUTPUT_DIR_ENV = "FED_RMAB_OUTDIR"


# --- metrics ---------------------------------------------------------------


def compute_regret(rewards: Sequence[float], rho_ref: float) -> np.ndarray:
    """Cumulative gap to a reference per-slot value: t*rho - sum(rewards[:t])."""
    if rho_ref < 0:
        raise ValueError(f"reference value must be nonnegative, got {rho_ref}")
    rewards = np.asarray(rewards, dtype=float)
    slots = np.arange(1, len(rewards) + 1, dtype=float)
    return slots * rho_ref - np.cumsum(rewards)


def compute_mse(
    estimates: Sequence[GilbertElliotDynamics],
    truth: Sequence[GilbertElliotDynamics],
) -> tuple:
    """Per-arm mean squared error over the two transition parameters."""
    if len(estimates) != len(truth):
        raise ValueError(
            f"{len(estimates)} estimates for {len(truth)} true dynamics"
        )
    return tuple(
        0.5 * ((e.theta01 - t.theta01) ** 2 + (e.theta11 - t.theta11) ** 2)
        for e, t in zip(estimates, truth)
    )


# --- exact tiny-instance oracle ---------------------------------------------


def _check_oracle_guard(n: int, k: int, horizon: int) -> None:
    if not (1 <= n <= 3):
        raise ValueError(f"oracle supports at most 3 arms, got {n}")
    if not 1 <= k < n:
        raise ValueError(f"oracle requires 1 <= k < n, got k={k}, n={n}")
    if not 1 <= horizon <= 6:
        raise ValueError(f"oracle supports horizons 1..6, got {horizon}")


def brute_force_optimal(
    arms: Sequence[ArmConfig],
    k: int,
    horizon: int,
    initial_beliefs: Sequence[float],
) -> tuple:
    """Exact expectimax over the belief tree of a tiny instance.

    Enumerates every k-subset at every node and branches on all 2^k
    observation outcomes weighted by the current beliefs.  Returns
    (optimal expected total reward, optimal first action).
    """
    n = len(arms)
    _check_oracle_guard(n, k, horizon)
    rates = [arm.rate for arm in arms]
    dynamics = [arm.dynamics for arm in arms]
    subsets = list(combinations(range(n), k))
    outcomes = list(product((0, 1), repeat=k))

    def value(beliefs: tuple, depth: int) -> float:
        best = -math.inf
        for subset in subsets:
            total = sum(beliefs[i] * rates[i] for i in subset)
            if depth > 1:
                for outcome in outcomes:
                    prob = 1.0
                    for i, s in zip(subset, outcome):
                        prob *= beliefs[i] if s else 1.0 - beliefs[i]
                    if prob == 0.0:
                        continue
                    total += prob * value(
                        _next_beliefs(beliefs, subset, outcome, dynamics), depth - 1
                    )
            if total > best:
                best = total
        return best

    best_value = -math.inf
    best_action = None
    start = tuple(initial_beliefs)
    for subset in subsets:
        total = sum(start[i] * rates[i] for i in subset)
        if horizon > 1:
            for outcome in outcomes:
                prob = 1.0
                for i, s in zip(subset, outcome):
                    prob *= start[i] if s else 1.0 - start[i]
                if prob == 0.0:
                    continue
                total += prob * value(
                    _next_beliefs(start, subset, outcome, dynamics), horizon - 1
                )
        if total > best_value:
            best_value = total
            best_action = subset
    return best_value, best_action


def _next_beliefs(beliefs, subset, outcome, dynamics) -> tuple:
    nxt = list(beliefs)
    for i in range(len(beliefs)):
        nxt[i] = propagate(dynamics[i], beliefs[i])
    for i, s in zip(subset, outcome):
        nxt[i] = dynamics[i].theta11 if s else dynamics[i].theta01
    return tuple(nxt)


def policy_expected_value(
    arms: Sequence[ArmConfig],
    horizon: int,
    initial_beliefs: Sequence[float],
    select: Callable[[tuple], tuple],
) -> float:
    """Exact expected total reward of a deterministic belief-fed policy,
    evaluated on the same observation tree as the oracle."""
    n = len(arms)
    if not 1 <= horizon <= 8:
        raise ValueError(f"supported horizons are 1..8, got {horizon}")
    rates = [arm.rate for arm in arms]
    dynamics = [arm.dynamics for arm in arms]

    def value(beliefs: tuple, depth: int) -> float:
        subset = select(beliefs)
        total = sum(beliefs[i] * rates[i] for i in subset)
        if depth > 1:
            for outcome in product((0, 1), repeat=len(subset)):
                prob = 1.0
                for i, s in zip(subset, outcome):
                    prob *= beliefs[i] if s else 1.0 - beliefs[i]
                if prob == 0.0:
                    continue
                total += prob * value(
                    _next_beliefs(beliefs, subset, outcome, dynamics), depth - 1
                )
        return total

    if any(not 0 <= i < n for i in select(tuple(initial_beliefs))):
        raise ValueError("policy selected an out-of-range arm")
    return value(tuple(initial_beliefs), horizon)


def index_policy_selector(policy: Policy) -> Callable[[tuple], tuple]:
    """Adapt a Policy into the belief->action map the evaluators expect."""
    return lambda beliefs: policy.select(beliefs, rng=None)


# --- Monte-Carlo aggregation -------------------------------------------------


def _trial_records(config: ExperimentConfig, trial: int) -> list:
    return run_experiment(config, trial=trial)


def run_monte_carlo(
    config: ExperimentConfig,
    workers: int = 1,
    csv_path: Optional[str] = None,
) -> list:
    """Run config.trials independent trials and aggregate per episode.

    Reduction order is fixed by trial index, so results do not depend on
    the worker count.  Optionally writes the aggregated CSV.
    """
    trials = config.trials
    if workers > 1 and trials > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunk = max(1, trials // (workers * 8))
            per_trial = list(
                pool.map(partial(_trial_records, config), range(trials), chunksize=chunk)
            )
    else:
        per_trial = [_trial_records(config, trial) for trial in range(trials)]
    records = aggregate_trials(per_trial)
    if csv_path is not None:
        write_csv(records, config.n_arms, csv_path)
    return records


def aggregate_trials(per_trial: Sequence[list]) -> list:
    """Per-episode means over trials with normal 95% half-widths."""
    if not per_trial:
        return []
    n_episodes = min(len(rows) for rows in per_trial)
    n_trials = len(per_trial)
    z95 = 1.959963984540054
    out = []
    for e in range(n_episodes):
        rows = [rows_t[e] for rows_t in per_trial]
        rewards = np.array([r.reward_mean for r in rows])
        if n_trials > 1:
            ci = z95 * rewards.std(ddof=1) / math.sqrt(n_trials)
        else:
            ci = 0.0
        regrets = [r.regret for r in rows]
        mse = tuple(
            float(np.mean([r.mse[i] for r in rows])) for i in range(len(rows[0].mse))
        )
        reasons = sorted(r.end_reason for r in rows)
        modal = max(set(reasons), key=lambda v: (reasons.count(v), v))
        out.append(
            MetricsRecord(
                policy=rows[0].policy,
                episode=rows[0].episode,
                t_end=float(np.mean([r.t_end for r in rows])),
                reward_mean=float(rewards.mean()),
                reward_ci=float(ci),
                cum_reward=float(np.mean([r.cum_reward for r in rows])),
                regret=(
                    float(np.mean(regrets)) if regrets[0] is not None else None
                ),
                mse=mse,
                episode_len=float(np.mean([r.episode_len for r in rows])),
                end_reason=modal,
            )
        )
    return out


# --- reference value ---------------------------------------------------------


def estimate_reference_reward(
    arms: Sequence[ArmConfig],
    k: int,
    slots: int = 100_000,
    seed: int = 0,
) -> float:
    """Empirical per-slot reward of a long single-agent run of the
    known-dynamics index policy; the regret reference value."""
    from .fedtswi import AgentState, _execute_slot
    from .config import agent_streams, trial_seed_sequences
    from .env import Environment
    import random as _random

    agent_seqs, _ = trial_seed_sequences(seed, 0, 1)
    env_seq, policy_seed = agent_streams(agent_seqs[0], len(arms))
    agent = AgentState(Environment(arms, env_seq), _random.Random(policy_seed))
    dynamics = tuple(arm.dynamics for arm in arms)
    rates = tuple(arm.rate for arm in arms)
    policy = make_policy("wi-known", k, rates, dynamics, dynamics)
    agent.reset_beliefs(dynamics)
    never = [int(1e18)] * (2 * len(arms))
    total = 0.0
    for _ in range(slots):
        reward, _, _, _ = _execute_slot(agent, policy, never)
        total += reward
    return total / slots


# --- CSV ----------------------------------------------------------------------


def csv_columns(n_arms: int) -> list:
    return (
        ["policy", "episode", "t_end", "reward_mean", "reward_ci", "cum_reward", "regret"]
        + [f"mse_arm{i}" for i in range(n_arms)]
        + ["episode_len", "end_reason"]
    )


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return format(x, ".12g")
    return str(x)


def render_csv(records: Sequence[MetricsRecord], n_arms: int) -> str:
    buf = io.StringIO()
    buf.write(",".join(csv_columns(n_arms)) + "\n")
    for r in records:
        if len(r.mse) != n_arms:
            raise ValueError(
                f"record has {len(r.mse)} mse columns, expected {n_arms}"
            )
        fields = [
            r.policy,
            str(r.episode),
            _fmt(r.t_end),
            _fmt(r.reward_mean),
            _fmt(r.reward_ci),
            _fmt(r.cum_reward),
            _fmt(r.regret),
            *[_fmt(v) for v in r.mse],
            _fmt(r.episode_len),
            r.end_reason,
        ]
        buf.write(",".join(fields) + "\n")
    return buf.getvalue()


def resolve_output_path(path: str) -> str:
    if os.path.isabs(path):
        return path
    base = os.environ.get(OUTPUT_DIR_ENV, "")
    return os.path.join(base, path) if base else path


def write_csv(records: Sequence[MetricsRecord], n_arms: int, path: str) -> str:
    resolved = resolve_output_path(path)
    directory = os.path.dirname(resolved)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(resolved, "w", newline="") as fh:
        fh.write(render_csv(records, n_arms))
    return resolved


def episode_count_bound(n_arms: int, horizon: int, k: int, m_agents: int) -> float:
    """Upper bound on the number of episodes started within the horizon:
    sqrt(4 * N * T * |S| * log2(T + 1) / (K * M)) with two-state arms."""
    if horizon < 1:
        raise ConfigError(f"horizon must be >= 1, got {horizon}")
    return math.sqrt(
        4.0 * n_arms * horizon * 2.0 * math.log2(horizon + 1.0) / (k * m_agents)
    )
