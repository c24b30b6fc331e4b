"""Episodic federated loop and the selection policies.

Each episode alternates policy improvement at the server (merge counts,
draw dynamics, rebuild the index policy) with policy evaluation at the
agents (execute the policy, track beliefs, collect consecutive-selection
transition counts).  An episode ends when its slot budget (one more than
the previous episode's length) is exhausted, or as soon as any agent's
visit count for some (arm, prior-state) pair exceeds ``2^M`` times its
episode-start snapshot.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .bayes import (
    AgentWeights,
    TransitionCounts,
    aggregate,
    posterior_mean,
    sample_dynamics,
    ucb_dynamics,
)
from .belief import stationary_belief
from .config import (
    LEARNING_KINDS,
    POLICY_KINDS,
    UCB_KINDS,
    ExperimentConfig,
    MetricsRecord,
    agent_streams,
    trial_seed_sequences,
)
from .env import Environment, GilbertElliotDynamics
from .whittle import whittle_closed

_MYOPIC_KINDS = ("myopic-known", "fedts-myopic", "feducb-myopic")


class Policy:
    """Arm-selection rule plus the dynamics agents use for belief updates.

    ``select`` always returns exactly k distinct arm indices, ties broken
    toward the lowest index.  Index values are memoized per belief: within
    an episode the dynamics are fixed and the reachable beliefs form a
    small set, so repeated closed-form evaluations are wasted work.
    """

    __slots__ = ("kind", "k", "rates", "dynamics", "fixed_set", "t01", "t11", "_cache")

    def __init__(
        self,
        kind: str,
        k: int,
        rates: Sequence[float],
        dynamics: Sequence[GilbertElliotDynamics],
        fixed_set: Optional[tuple] = None,
    ):
        if kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {kind!r}")
        self.kind = kind
        self.k = k
        self.rates = tuple(rates)
        self.dynamics = tuple(dynamics)
        self.fixed_set = fixed_set
        self.t01 = [d.theta01 for d in self.dynamics]
        self.t11 = [d.theta11 for d in self.dynamics]
        self._cache = [dict() for _ in self.dynamics]

    def scores(self, beliefs: Sequence[float]) -> list:
        if self.kind in _MYOPIC_KINDS:
            return [b * r for b, r in zip(beliefs, self.rates)]
        values = []
        for n, b in enumerate(beliefs):
            cache = self._cache[n]
            w = cache.get(b)
            if w is None:
                w = whittle_closed(self.dynamics[n], self.rates[n], b)
                cache[b] = w
            values.append(w)
        return values

    def select(self, beliefs: Sequence[float], rng: random.Random) -> tuple:
        n = len(self.rates)
        if self.kind == "random":
            return tuple(sorted(rng.sample(range(n), self.k)))
        if self.kind == "fixed":
            return self.fixed_set
        values = self.scores(beliefs)
        ranked = sorted(range(n), key=lambda i: (-values[i], i))
        return tuple(sorted(ranked[: self.k]))


def make_policy(
    kind: str,
    k: int,
    rates: Sequence[float],
    dynamics: Sequence[GilbertElliotDynamics],
    true_dynamics: Optional[Sequence[GilbertElliotDynamics]] = None,
) -> Policy:
    """Build a policy; the fixed kind precomputes its top-k by b0*rate."""
    fixed_set = None
    if kind == "fixed":
        base = true_dynamics if true_dynamics is not None else dynamics
        keyed = [stationary_belief(d) * r for d, r in zip(base, rates)]
        ranked = sorted(range(len(rates)), key=lambda i: (-keyed[i], i))
        fixed_set = tuple(sorted(ranked[:k]))
    return Policy(kind, k, rates, dynamics, fixed_set)


def select_arms(
    policy: Policy, beliefs: Sequence[float], rng: random.Random
) -> tuple:
    return policy.select(beliefs, rng)


class AgentState:
    """One agent's mutable evaluation state: environment, beliefs, counts,
    the consecutive-selection gate, and cumulative pull counts."""

    __slots__ = (
        "env",
        "n_arms",
        "beliefs",
        "counts",
        "last_state",
        "pulls",
        "policy_rng",
        "_selected",
    )

    def __init__(self, env: Environment, policy_rng: random.Random):
        self.env = env
        self.n_arms = len(env.arms)
        self.beliefs = [0.5] * self.n_arms
        self.counts = TransitionCounts(self.n_arms)
        self.last_state: list = [None] * self.n_arms
        self.pulls = [0] * self.n_arms
        self.policy_rng = policy_rng
        self._selected = [False] * self.n_arms

    def reset_beliefs(self, dynamics: Sequence[GilbertElliotDynamics]) -> None:
        self.beliefs = [stationary_belief(d) for d in dynamics]


@dataclass
class EpisodeState:
    """Bookkeeping for one episode: index, start slot, length budget, and
    the count snapshot the doubling rule compares against."""

    l: int
    t_l: int
    t_prev: int
    count_snapshot: TransitionCounts

    @classmethod
    def begin(cls, l: int, t_l: int, t_prev: int, counts: TransitionCounts) -> "EpisodeState":
        if t_prev < 1:
            raise ValueError(f"previous episode length must be >= 1, got {t_prev}")
        return cls(l=l, t_l=t_l, t_prev=t_prev, count_snapshot=counts.copy())


@dataclass
class EpisodeTrace:
    slots: int
    total_reward: float
    end_reason: str
    rewards: Optional[list] = None
    selections: Optional[list] = None
    observations: Optional[list] = None


def _doubling_thresholds(snapshot: TransitionCounts, m_agents: int) -> list:
    # unseen pairs get threshold 1 so the first observation never ends
    # the episode by itself
    factor = 2 ** m_agents
    return [max(1, factor * c) for c in snapshot.cell_totals()]


def _execute_slot(agent: AgentState, policy: Policy, thresholds: list) -> tuple:
    """One slot: select, observe, gate transition counts, update beliefs.

    Returns (slot reward, selection, observations, tripped) where tripped
    reports a count cell exceeding its doubling threshold.
    """
    beliefs = agent.beliefs
    selection = policy.select(beliefs, agent.policy_rng)
    observations = agent.env.step(selection, expect_k=policy.k)
    counts = agent.counts
    last = agent.last_state
    pulls = agent.pulls
    flags = agent._selected
    t01 = policy.t01
    t11 = policy.t11
    tripped = False
    reward = 0.0
    for obs in observations:
        n = obs.arm
        s = obs.state
        reward += obs.reward
        prev = last[n]
        if prev is not None:
            counts.record(n, prev, s)
            if counts.cell_total(n, prev) > thresholds[2 * n + prev]:
                tripped = True
        pulls[n] += 1
        flags[n] = True
        last[n] = s
        beliefs[n] = t11[n] if s else t01[n]
    for n in range(agent.n_arms):
        if flags[n]:
            flags[n] = False
        else:
            last[n] = None
            b = beliefs[n]
            nb = b * t11[n] + (1.0 - b) * t01[n]
            beliefs[n] = 0.0 if nb < 0.0 else (1.0 if nb > 1.0 else nb)
    return reward, selection, observations, tripped


def run_agent_episode(
    agent: AgentState,
    policy: Policy,
    episode: EpisodeState,
    m_agents: int,
    collect: bool = False,
) -> EpisodeTrace:
    """Execute one agent's episode against both stopping criteria.

    The slot budget admits at most t_prev + 1 slots; a count trip ends the
    episode after the triggering slot completes.
    """
    thresholds = _doubling_thresholds(episode.count_snapshot, m_agents)
    max_slots = episode.t_prev + 1
    slots = 0
    total = 0.0
    tripped = False
    rewards = [] if collect else None
    selections = [] if collect else None
    observations = [] if collect else None
    while slots < max_slots and not tripped:
        reward, selection, obs, tripped = _execute_slot(agent, policy, thresholds)
        slots += 1
        total += reward
        if collect:
            rewards.append(reward)
            selections.append(selection)
            observations.append(obs)
    return EpisodeTrace(
        slots=slots,
        total_reward=total,
        end_reason="doubling" if tripped else "budget",
        rewards=rewards,
        selections=selections,
        observations=observations,
    )


def run_lockstep_episode(
    agents: Sequence[AgentState],
    policy: Policy,
    t_prev: int,
    m_agents: int,
) -> tuple:
    """Synchronized episode across agents: ends for everyone at the end of
    the slot in which any agent trips the doubling rule.

    Returns (slots, per-agent rewards, end reason).
    """
    thresholds = [_doubling_thresholds(agent.counts, m_agents) for agent in agents]
    max_slots = t_prev + 1
    slots = 0
    tripped = False
    totals = [0.0] * len(agents)
    while slots < max_slots and not tripped:
        for i, agent in enumerate(agents):
            reward, _, _, hit = _execute_slot(agent, policy, thresholds[i])
            totals[i] += reward
            tripped = tripped or hit
        slots += 1
    return slots, totals, ("doubling" if tripped else "budget")


def server_round(
    per_agent_counts: Sequence[TransitionCounts],
    prior: tuple,
    weights: Optional[AgentWeights],
    rng: random.Random,
    m_agents: Optional[int] = None,
) -> tuple:
    """Policy improvement: merge counts and draw dynamics for the next
    episode.  The draw itself is the broadcast payload; the closed-form
    index makes shipping an index table redundant."""
    if m_agents is not None and len(per_agent_counts) != m_agents:
        raise ValueError(
            f"expected reports from {m_agents} agents, got {len(per_agent_counts)}"
        )
    posterior = aggregate(per_agent_counts, weights, prior)
    return sample_dynamics(posterior, rng)


def _mse_per_arm(
    estimates: Sequence[GilbertElliotDynamics],
    truth: Sequence[GilbertElliotDynamics],
) -> tuple:
    return tuple(
        0.5 * ((e.theta01 - t.theta01) ** 2 + (e.theta11 - t.theta11) ** 2)
        for e, t in zip(estimates, truth)
    )


def run_experiment(
    config: ExperimentConfig,
    trial: int = 0,
    sample_override: Optional[Callable[[int], tuple]] = None,
) -> list:
    """One trial: the full episodic loop over M lockstep agents.

    ``sample_override``, if given, replaces the Thompson draw of episode l
    with ``sample_override(l)`` (used to pin the posterior to a point mass).
    Returns one MetricsRecord per executed episode.
    """
    n = config.n_arms
    m = config.m_agents
    true_dynamics = tuple(arm.dynamics for arm in config.arms)
    rates = tuple(arm.rate for arm in config.arms)
    learning = config.policy in LEARNING_KINDS

    agent_seqs, server_seed = trial_seed_sequences(config.master_seed, trial, m)
    server_rng = random.Random(server_seed)
    agents = []
    for seq in agent_seqs:
        env_seq, policy_seed = agent_streams(seq, n)
        env = Environment(
            config.arms,
            env_seq,
            init="stationary" if config.init_states is None else config.init_states,
        )
        agents.append(AgentState(env, random.Random(policy_seed)))
    weights = (
        AgentWeights(config.weights)
        if config.weights is not None
        else AgentWeights.uniform(m)
    )

    records = []
    t = 1
    t_prev = 1
    cum_reward = 0.0  # per-agent cumulative
    policy: Optional[Policy] = None
    zero_mse = (0.0,) * n

    for l in range(1, config.episodes + 1):
        if config.t_budget is not None and t > config.t_budget:
            break

        if learning:
            counts = [agent.counts for agent in agents]
            if config.policy in UCB_KINDS:
                point = posterior_mean(aggregate(counts, weights, config.prior))
                pulls = [sum(agent.pulls[i] for agent in agents) for i in range(n)]
                dynamics = ucb_dynamics(
                    point, pulls, l, natural_log=config.ucb_natural_log
                )
            else:
                dynamics = server_round(
                    counts, config.prior, weights, server_rng, m_agents=m
                )
                if sample_override is not None:
                    dynamics = sample_override(l)
            policy = make_policy(
                config.policy, config.k_select, rates, dynamics, true_dynamics
            )
        elif policy is None:
            policy = make_policy(
                config.policy, config.k_select, rates, true_dynamics, true_dynamics
            )
        if l == 1:
            for agent in agents:
                agent.reset_beliefs(policy.dynamics)

        slots, totals, end_reason = run_lockstep_episode(agents, policy, t_prev, m)

        t_end = t + slots - 1
        episode_reward = sum(totals) / m
        cum_reward += episode_reward
        if learning:
            post = aggregate([agent.counts for agent in agents], weights, config.prior)
            mse = _mse_per_arm(posterior_mean(post), true_dynamics)
        else:
            mse = zero_mse
        records.append(
            MetricsRecord(
                policy=config.policy,
                episode=l,
                t_end=float(t_end),
                reward_mean=episode_reward / slots,
                reward_ci=0.0,
                cum_reward=cum_reward,
                regret=(
                    t_end * config.rho_ref - cum_reward
                    if config.rho_ref is not None
                    else None
                ),
                mse=mse,
                episode_len=float(slots),
                end_reason=end_reason,
            )
        )
        t = t_end + 1
        t_prev = slots

    return records
