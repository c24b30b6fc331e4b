"""Experiment configuration, per-episode metrics, and seed derivation.

A configuration is a plain, JSON-serializable description of one
experiment: the arm set, the federation size, the selection policy, the
prior, and the seeding rule.  All random streams are derived from the
master seed through a seed-sequence tree keyed by (trial, role), so runs
are reproducible and adding agents, arms, or trials never perturbs the
streams of existing ones.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from .env import ArmConfig, GilbertElliotDynamics
from .errors import ConfigError

POLICY_KINDS = (
    "fedtswi",
    "wi-known",
    "myopic-known",
    "fedts-myopic",
    "feducb-wi",
    "feducb-myopic",
    "random",
    "fixed",
)

# policies that learn dynamics through the federated server round
LEARNING_KINDS = ("fedtswi", "fedts-myopic", "feducb-wi", "feducb-myopic")
UCB_KINDS = ("feducb-wi", "feducb-myopic")


@dataclass
class ExperimentConfig:
    arms: tuple
    policy: str
    m_agents: int = 1
    k_select: int = 1
    episodes: int = 50
    t_budget: Optional[int] = None
    prior: tuple = (1.0, 1.0)
    weights: Optional[tuple] = None
    master_seed: int = 0
    trials: int = 1
    rho_ref: Optional[float] = None
    init_states: Optional[tuple] = None
    ucb_natural_log: bool = False

    def __post_init__(self) -> None:
        self.arms = tuple(self.arms)
        self.validate()

    @property
    def n_arms(self) -> int:
        return len(self.arms)

    def validate(self) -> None:
        if self.policy not in POLICY_KINDS:
            raise ConfigError(f"unknown policy kind {self.policy!r}")
        if self.n_arms < 1:
            raise ConfigError("at least one arm is required")
        if not 1 <= self.k_select <= self.n_arms:
            raise ConfigError(
                f"k_select must lie in [1, {self.n_arms}], got {self.k_select}"
            )
        if self.m_agents < 1:
            raise ConfigError(f"m_agents must be >= 1, got {self.m_agents}")
        if self.episodes < 1:
            raise ConfigError(f"episodes must be >= 1, got {self.episodes}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if self.t_budget is not None and self.t_budget < 1:
            raise ConfigError(f"t_budget must be >= 1, got {self.t_budget}")
        if len(self.prior) != 2 or self.prior[0] <= 0 or self.prior[1] <= 0:
            raise ConfigError(f"prior must be two positive reals, got {self.prior}")
        if self.weights is not None:
            if len(self.weights) != self.m_agents:
                raise ConfigError(
                    f"{len(self.weights)} weights for {self.m_agents} agents"
                )
            if any(w < 0 for w in self.weights) or not any(w > 0 for w in self.weights):
                raise ConfigError("weights must be nonnegative with at least one positive")
        if self.init_states is not None and len(self.init_states) != self.n_arms:
            raise ConfigError(
                f"{len(self.init_states)} initial states for {self.n_arms} arms"
            )

    def to_dict(self) -> dict:
        data = asdict(self)
        data["arms"] = [
            {
                "theta01": arm.dynamics.theta01,
                "theta11": arm.dynamics.theta11,
                "rate": arm.rate,
            }
            for arm in self.arms
        ]
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data)
        try:
            arms = tuple(
                ArmConfig(
                    dynamics=GilbertElliotDynamics(a["theta01"], a["theta11"]),
                    rate=a["rate"],
                )
                for a in data.pop("arms")
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid arm specification: {exc}") from exc
        for key in ("prior", "weights", "init_states"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        known = {f.name for f in cls.__dataclass_fields__.values()}  # type: ignore[attr-defined]
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(arms=arms, **data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


@dataclass
class MetricsRecord:
    """One output row: per-episode metrics, aggregated over trials."""

    policy: str
    episode: int
    t_end: float
    reward_mean: float
    reward_ci: float
    cum_reward: float
    regret: Optional[float]
    mse: tuple
    episode_len: float
    end_reason: str


# --- seed derivation -------------------------------------------------------
#
# master -> (trial) -> [agent 0..M-1, server]
# agent  -> [arm 0..N-1 env streams, policy stream]

_SS = np.random.SeedSequence


def _to_int(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1, np.uint64)[0])


def trial_seed_sequences(master_seed: int, trial: int, m_agents: int) -> tuple:
    """Return (per-agent seed sequences, server seed int) for one trial."""
    parts = _SS([int(master_seed), int(trial)]).spawn(m_agents + 1)
    return tuple(parts[:m_agents]), _to_int(parts[m_agents])


def agent_streams(agent_seq: np.random.SeedSequence, n_arms: int) -> tuple:
    """Return (env seed sequence covering the arm streams, policy seed int)."""
    env_seq, policy_seq = agent_seq.spawn(2)
    return env_seq, _to_int(policy_seq)


def benchmark_arms() -> tuple:
    """Four-channel instance used throughout the tests and docs."""
    spec = [(0.20, 0.80, 0.4), (0.89, 0.17, 0.9), (0.1, 0.9, 0.7), (0.9, 0.16, 0.6)]
    return tuple(
        ArmConfig(dynamics=GilbertElliotDynamics(t01, t11), rate=rate)
        for t01, t11, rate in spec
    )
