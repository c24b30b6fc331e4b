"""Conjugate estimation of arm dynamics from consecutive-selection samples.

Each transition probability is a Bernoulli parameter with a Beta posterior.
Agents keep per-(arm, prior-state) transition counts locally; the server
merges them by weighted count summing, which is the conjugate special case
of log-linear posterior pooling.  A sample from the merged posterior drives
Thompson selection; the posterior mean plus an exploration bonus drives the
UCB comparison index.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Optional, Sequence

from .env import GilbertElliotDynamics

DYNAMICS_EPS = 1e-6  # sampled / inflated probabilities are kept in [eps, 1-eps]


class TransitionCounts:
    """Per-arm, per-prior-state counts of observed next states.

    Cells must be incremented only for arms selected in two consecutive
    slots, the sole situation where both endpoints of a transition are
    observed.  ``cell_total(arm, state)`` is the visit count of that
    state-action pair and is what the episode stopping rule watches.
    """

    __slots__ = ("n_arms", "_to_good", "_to_bad")

    def __init__(self, n_arms: int):
        self.n_arms = n_arms
        self._to_good = [0] * (2 * n_arms)  # index 2*arm + prior_state
        self._to_bad = [0] * (2 * n_arms)

    def record(self, arm: int, s_prev: int, s_next: int) -> None:
        idx = 2 * arm + s_prev
        if s_next:
            self._to_good[idx] += 1
        else:
            self._to_bad[idx] += 1

    def to_good(self, arm: int, s_prev: int) -> int:
        return self._to_good[2 * arm + s_prev]

    def to_bad(self, arm: int, s_prev: int) -> int:
        return self._to_bad[2 * arm + s_prev]

    def cell_total(self, arm: int, s_prev: int) -> int:
        idx = 2 * arm + s_prev
        return self._to_good[idx] + self._to_bad[idx]

    def cell_totals(self) -> list:
        return [g + b for g, b in zip(self._to_good, self._to_bad)]

    def total(self) -> int:
        return sum(self._to_good) + sum(self._to_bad)

    def copy(self) -> "TransitionCounts":
        dup = TransitionCounts(self.n_arms)
        dup._to_good = self._to_good.copy()
        dup._to_bad = self._to_bad.copy()
        return dup

    def to_flat(self) -> list:
        """Row-major over arm x prior-state x (to_good, to_bad)."""
        flat = []
        for idx in range(2 * self.n_arms):
            flat.append(self._to_good[idx])
            flat.append(self._to_bad[idx])
        return flat

    @classmethod
    def from_flat(cls, n_arms: int, flat: Sequence[int]) -> "TransitionCounts":
        if len(flat) != 4 * n_arms:
            raise ValueError(f"expected {4 * n_arms} count cells, got {len(flat)}")
        counts = cls(n_arms)
        for idx in range(2 * n_arms):
            counts._to_good[idx] = int(flat[2 * idx])
            counts._to_bad[idx] = int(flat[2 * idx + 1])
        return counts

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, TransitionCounts)
            and self._to_good == other._to_good
            and self._to_bad == other._to_bad
        )


def record_transition(
    counts: TransitionCounts, arm: int, s_prev: int, s_next: int
) -> TransitionCounts:
    """Increment exactly one cell; caller guarantees consecutive selection."""
    counts.record(arm, s_prev, s_next)
    return counts


@dataclass(frozen=True)
class AgentWeights:
    """Per-agent sample weights used in posterior pooling."""

    omega: tuple

    def __post_init__(self) -> None:
        if any(w < 0 for w in self.omega):
            raise ValueError("agent weights must be nonnegative")
        if not any(w > 0 for w in self.omega):
            raise ValueError("at least one agent weight must be positive")

    @classmethod
    def uniform(cls, n_agents: int) -> "AgentWeights":
        return cls(omega=(1.0,) * n_agents)


class BetaPosterior:
    """Beta(alpha, beta) per (arm, prior-state) transition probability."""

    __slots__ = ("n_arms", "alpha", "beta")

    def __init__(self, n_arms: int, alpha: Sequence[float], beta: Sequence[float]):
        self.n_arms = n_arms
        self.alpha = list(alpha)
        self.beta = list(beta)

    def params(self, arm: int, s_prev: int) -> tuple:
        idx = 2 * arm + s_prev
        return self.alpha[idx], self.beta[idx]


def aggregate(
    per_agent_counts: Sequence[TransitionCounts],
    weights: Optional[AgentWeights] = None,
    prior: tuple = (1.0, 1.0),
) -> BetaPosterior:
    """Server-side posterior from weighted count sums over agents.

    With unit weights this is exactly the posterior a single agent holding
    the pooled data would compute.
    """
    if not per_agent_counts:
        raise ValueError("need counts from at least one agent")
    n_arms = per_agent_counts[0].n_arms
    if any(c.n_arms != n_arms for c in per_agent_counts):
        raise ValueError("count tables disagree on the number of arms")
    if weights is None:
        weights = AgentWeights.uniform(len(per_agent_counts))
    if len(weights.omega) != len(per_agent_counts):
        raise ValueError(
            f"{len(weights.omega)} weights for {len(per_agent_counts)} agents"
        )
    alpha0, beta0 = prior
    if alpha0 <= 0 or beta0 <= 0:
        raise ValueError(f"prior parameters must be positive, got {prior}")

    alpha = [alpha0] * (2 * n_arms)
    beta = [beta0] * (2 * n_arms)
    for w, counts in zip(weights.omega, per_agent_counts):
        for idx in range(2 * n_arms):
            alpha[idx] += w * counts._to_good[idx]
            beta[idx] += w * counts._to_bad[idx]
    return BetaPosterior(n_arms, alpha, beta)


def _clamp_unit(p: float) -> float:
    return min(max(p, DYNAMICS_EPS), 1.0 - DYNAMICS_EPS)


def sample_dynamics(posterior: BetaPosterior, rng: random.Random) -> tuple:
    """One Thompson draw per transition probability, arm-major order.

    Draws are clamped into [eps, 1-eps] so downstream belief arithmetic
    never sees an absorbing pair.
    """
    sampled = []
    for arm in range(posterior.n_arms):
        a0, b0 = posterior.params(arm, 0)
        a1, b1 = posterior.params(arm, 1)
        theta01 = _clamp_unit(rng.betavariate(a0, b0))
        theta11 = _clamp_unit(rng.betavariate(a1, b1))
        sampled.append(GilbertElliotDynamics(theta01, theta11))
    return tuple(sampled)


def posterior_mean(posterior: BetaPosterior) -> tuple:
    """alpha / (alpha + beta) per cell, as per-arm dynamics."""
    means = []
    for arm in range(posterior.n_arms):
        a0, b0 = posterior.params(arm, 0)
        a1, b1 = posterior.params(arm, 1)
        means.append(GilbertElliotDynamics(a0 / (a0 + b0), a1 / (a1 + b1)))
    return tuple(means)


def ucb_dynamics(
    point: Sequence[GilbertElliotDynamics],
    pulls: Sequence[int],
    episode: int,
    clamp: bool = True,
    natural_log: bool = False,
) -> tuple:
    """Point estimates inflated by an exploration bonus.

    The bonus is ``sqrt(log2(4 * episode) / pulls)`` per parameter (the 4
    is the joint state-action alphabet size of one arm); arms never pulled
    get an infinite bonus capped at 1-eps even when clamping is off.
    ``natural_log`` switches the logarithm base.  With ``clamp`` off the
    result is raw (theta01, theta11) float pairs, which may exceed 1.
    """
    if episode < 1:
        raise ValueError(f"episode index must be >= 1, got {episode}")
    log_term = math.log(4.0 * episode) if natural_log else math.log2(4.0 * episode)
    inflated = []
    for dyn, count in zip(point, pulls):
        if count > 0:
            bonus = math.sqrt(log_term / count)
            theta01 = dyn.theta01 + bonus
            theta11 = dyn.theta11 + bonus
        else:
            theta01 = theta11 = 1.0 - DYNAMICS_EPS
        if clamp:
            theta01, theta11 = _clamp_unit(theta01), _clamp_unit(theta11)
        inflated.append((theta01, theta11))
    if clamp:
        return tuple(GilbertElliotDynamics(a, b) for a, b in inflated)
    return tuple(inflated)
