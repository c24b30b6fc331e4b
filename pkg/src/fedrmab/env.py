"""Two-state Markov arm environment.

Each arm is an independent good/bad chain parameterized by the transition
pair ``(theta01, theta11)`` and a per-slot data rate.  Selected arms reveal
their pre-transition state and pay ``rate * state``; every arm transitions
each slot whether selected or not.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Optional, Sequence, Union

import numpy as np


@dataclass(frozen=True, slots=True)
class GilbertElliotDynamics:
    """Transition pair of a two-state chain: P(0->1) and P(1->1)."""

    theta01: float
    theta11: float

    def __post_init__(self) -> None:
        for name, p in (("theta01", self.theta01), ("theta11", self.theta11)):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")

    def row(self, state: int) -> float:
        """Probability of landing in the good state given the current state."""
        return self.theta11 if state else self.theta01


@dataclass(frozen=True, slots=True)
class ArmConfig:
    dynamics: GilbertElliotDynamics
    rate: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"rate must lie in [0, 1], got {self.rate}")


class Observation(NamedTuple):
    arm: int
    state: int
    reward: float


# either "stationary" (Bernoulli draw at each arm's stationary belief) or an
# explicit per-arm state vector
InitialStateRule = Union[str, Sequence[int]]


class Environment:
    """Single-owner mutable state for one agent's N arms.

    Every arm consumes its own child random stream, so appending arms never
    perturbs existing trajectories.
    """

    def __init__(self, arms: Sequence[ArmConfig], seed, init: InitialStateRule = "stationary"):
        if len(arms) == 0:
            raise ValueError("arm list must be nonempty")
        self.arms = tuple(arms)
        self.t = 0
        n = len(self.arms)
        root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        self._rngs = [
            random.Random(int(child.generate_state(1, np.uint64)[0]))
            for child in root.spawn(n)
        ]
        self.true_states = self._draw_initial_states(init)

    def _draw_initial_states(self, init: InitialStateRule) -> list:
        from .belief import stationary_belief  # local import: belief depends on this module

        if isinstance(init, str):
            if init != "stationary":
                raise ValueError(f"unknown initial-state rule {init!r}")
            return [
                1 if self._rngs[n].random() < stationary_belief(arm.dynamics) else 0
                for n, arm in enumerate(self.arms)
            ]
        states = list(init)
        if len(states) != len(self.arms):
            raise ValueError(
                f"expected {len(self.arms)} initial states, got {len(states)}"
            )
        if any(s not in (0, 1) for s in states):
            raise ValueError("initial states must be 0 or 1")
        return states

    def step(self, selected: Iterable[int], expect_k: Optional[int] = None) -> list:
        """Observe the selected arms at slot t, then advance every arm.

        Observations carry the pre-transition state; rewards are exactly
        ``rate * state``.
        """
        chosen = sorted(selected)
        if len(set(chosen)) != len(chosen):
            raise ValueError(f"selected arms must be distinct, got {chosen}")
        if expect_k is not None and len(chosen) != expect_k:
            raise ValueError(f"expected {expect_k} selected arms, got {len(chosen)}")
        n_arms = len(self.arms)
        if any(not 0 <= a < n_arms for a in chosen):
            raise ValueError(f"arm index out of range in {chosen}")

        states = self.true_states
        observations = [
            Observation(a, states[a], states[a] * self.arms[a].rate) for a in chosen
        ]
        for a in range(n_arms):
            dyn = self.arms[a].dynamics
            p = dyn.theta11 if states[a] else dyn.theta01
            states[a] = 1 if self._rngs[a].random() < p else 0
        self.t += 1
        return observations


def new_environment(
    arms: Sequence[ArmConfig], seed, init: InitialStateRule = "stationary"
) -> Environment:
    return Environment(arms, seed, init)
