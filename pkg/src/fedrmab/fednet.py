"""Multi-process federation over TCP with line-delimited JSON messages.

The server drives the same episodic loop as the in-process runner; agents
execute episodes locally and report transition counts, pull counts, slots,
and rewards.  For a single agent the networked run is bit-identical to the
in-process one.  With several agents, slot-level lockstep is relaxed: each
agent finishes its full local episode and the server truncates the next
episode's budget to the shortest report, so the doubling logic is preserved
up to one episode of deferral.

Wire format: one JSON object per line; integers exact, floats in shortest
round-trip decimal form (lossless for binary64).
"""

from __future__ import annotations

import json
import random
import socket
import time
from typing import Optional, Sequence

from .bayes import AgentWeights, TransitionCounts, aggregate, posterior_mean, sample_dynamics, ucb_dynamics
from .bayes import DYNAMICS_EPS
from .config import (
    LEARNING_KINDS,
    UCB_KINDS,
    ExperimentConfig,
    MetricsRecord,
    agent_streams,
    trial_seed_sequences,
)
from .env import Environment, GilbertElliotDynamics
from .errors import ProtocolError
from .fedtswi import AgentState, EpisodeState, make_policy, run_agent_episode

MESSAGE_KINDS = ("JOIN", "POLICY", "REPORT", "SHUTDOWN", "ERROR")
_SOCKET_TIMEOUT = 60.0


# --- codec -------------------------------------------------------------------


def encode_message(message: dict) -> bytes:
    kind = message.get("kind")
    if kind not in MESSAGE_KINDS:
        raise ProtocolError(f"cannot encode message kind {kind!r}")
    return (json.dumps(message, sort_keys=True, separators=(",", ":")) + "\n").encode()


def decode_message(line: bytes) -> dict:
    try:
        message = json.loads(line.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"undecodable message: {exc}") from exc
    if not isinstance(message, dict) or message.get("kind") not in MESSAGE_KINDS:
        raise ProtocolError(f"malformed message: {line!r}")
    return message


class _LineChannel:
    """Blocking line-oriented channel over a connected socket."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._rfile = sock.makefile("rb")

    def send(self, message: dict) -> None:
        try:
            self.sock.sendall(encode_message(message))
        except OSError as exc:
            raise ProtocolError(f"send failed: {exc}") from exc

    def recv(self) -> dict:
        try:
            line = self._rfile.readline()
        except OSError as exc:
            raise ProtocolError(f"recv failed: {exc}") from exc
        if not line:
            raise ProtocolError("peer closed the connection")
        return decode_message(line)

    def close(self) -> None:
        try:
            self._rfile.close()
            self.sock.close()
        except OSError:
            pass


def parse_address(address: str) -> tuple:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ProtocolError(f"address must be host:port, got {address!r}")
    return host, int(port)


# --- server ------------------------------------------------------------------


def _mse_per_arm(estimates, truth) -> tuple:
    return tuple(
        0.5 * ((e.theta01 - t.theta01) ** 2 + (e.theta11 - t.theta11) ** 2)
        for e, t in zip(estimates, truth)
    )


def serve(
    bind: str,
    config: ExperimentConfig,
    trial: int = 0,
    timeout: float = _SOCKET_TIMEOUT,
    ready_callback=None,
) -> list:
    """Run the server side until all episodes complete; returns the
    per-episode metrics records (same content as an in-process trial).

    All agents must JOIN with a matching config hash before episode 1.
    Any disconnect aborts the run; there is no fault tolerance.
    """
    host, port = parse_address(bind)
    m = config.m_agents
    n = config.n_arms
    expected_hash = config.config_hash()
    true_dynamics = tuple(arm.dynamics for arm in config.arms)
    rates = tuple(arm.rate for arm in config.arms)
    learning = config.policy in LEARNING_KINDS
    weights = (
        AgentWeights(config.weights)
        if config.weights is not None
        else AgentWeights.uniform(m)
    )
    _, server_seed = trial_seed_sequences(config.master_seed, trial, m)
    server_rng = random.Random(server_seed)

    listener = socket.create_server((host, port))
    listener.settimeout(timeout)
    if ready_callback is not None:
        ready_callback(listener.getsockname())

    channels: dict = {}
    current_episode = 0
    try:
        while len(channels) < m:
            try:
                conn, _ = listener.accept()
            except socket.timeout as exc:
                raise ProtocolError(
                    f"timed out waiting for agents ({len(channels)}/{m} joined)"
                ) from exc
            conn.settimeout(timeout)
            channel = _LineChannel(conn)
            join = channel.recv()
            if join.get("kind") != "JOIN":
                channel.send({"kind": "ERROR", "message": "expected JOIN"})
                channel.close()
                continue
            agent_id = join.get("agent")
            if join.get("config_hash") != expected_hash:
                channel.send({"kind": "ERROR", "message": "config hash mismatch"})
                channel.close()
                continue
            if not isinstance(agent_id, int) or not 0 <= agent_id < m or agent_id in channels:
                channel.send(
                    {"kind": "ERROR", "message": f"invalid or duplicate agent id {agent_id}"}
                )
                channel.close()
                continue
            channels[agent_id] = channel

        mirrors = [TransitionCounts(n) for _ in range(m)]
        pulls = [[0] * n for _ in range(m)]
        records = []
        t = 1
        t_prev = 1
        cum_reward = 0.0

        for l in range(1, config.episodes + 1):
            current_episode = l
            if config.t_budget is not None and t > config.t_budget:
                break
            if learning:
                if config.policy in UCB_KINDS:
                    point = posterior_mean(aggregate(mirrors, weights, config.prior))
                    total_pulls = [sum(p[i] for p in pulls) for i in range(n)]
                    dynamics = ucb_dynamics(
                        point, total_pulls, l, natural_log=config.ucb_natural_log
                    )
                else:
                    dynamics = sample_dynamics(
                        aggregate(mirrors, weights, config.prior), server_rng
                    )
            else:
                dynamics = true_dynamics
            payload = {
                "kind": "POLICY",
                "episode": l,
                "dynamics": [[d.theta01, d.theta11] for d in dynamics],
                "budget": t_prev,
            }
            for agent_id in range(m):
                channels[agent_id].send(payload)

            slots_reported = []
            rewards_reported = []
            reasons = []
            for agent_id in range(m):
                report = channels[agent_id].recv()
                if report.get("kind") != "REPORT" or report.get("episode") != l:
                    raise ProtocolError(
                        f"agent {agent_id} sent {report.get('kind')!r} for episode "
                        f"{report.get('episode')} (expected REPORT for {l})"
                    )
                mirrors[agent_id] = TransitionCounts.from_flat(n, report["counts"])
                pulls[agent_id] = [int(x) for x in report["pulls"]]
                slots_reported.append(int(report["slots"]))
                rewards_reported.append(float(report["reward"]))
                reasons.append(str(report["end_reason"]))

            slots = min(slots_reported)
            t_end = t + slots - 1
            episode_reward = sum(rewards_reported) / m
            cum_reward += episode_reward
            if learning:
                post = aggregate(mirrors, weights, config.prior)
                mse = _mse_per_arm(posterior_mean(post), true_dynamics)
            else:
                mse = (0.0,) * n
            records.append(
                MetricsRecord(
                    policy=config.policy,
                    episode=l,
                    t_end=float(t_end),
                    reward_mean=sum(rewards_reported) / sum(slots_reported),
                    reward_ci=0.0,
                    cum_reward=cum_reward,
                    regret=(
                        t_end * config.rho_ref - cum_reward
                        if config.rho_ref is not None
                        else None
                    ),
                    mse=mse,
                    episode_len=float(slots),
                    end_reason="doubling" if "doubling" in reasons else "budget",
                )
            )
            t = t_end + 1
            t_prev = slots

        for agent_id in range(m):
            channels[agent_id].send({"kind": "SHUTDOWN"})
        return records
    except ProtocolError as exc:
        raise ProtocolError(f"run aborted at episode {current_episode}: {exc}") from exc
    finally:
        for channel in channels.values():
            channel.close()
        listener.close()


# --- agent -------------------------------------------------------------------


def _connect(address: tuple, retries: int = 50, delay: float = 0.1) -> socket.socket:
    last_error: Optional[OSError] = None
    for _ in range(retries):
        try:
            return socket.create_connection(address, timeout=_SOCKET_TIMEOUT)
        except OSError as exc:
            last_error = exc
            time.sleep(delay)
    raise ProtocolError(f"could not reach server at {address}: {last_error}")


def agent_run(
    server: str,
    agent_id: int,
    config: ExperimentConfig,
    seed: Optional[int] = None,
    trial: int = 0,
) -> None:
    """Policy-evaluation client: JOIN, then loop POLICY -> episode -> REPORT.

    Random streams are derived exactly as in the in-process runner; ``seed``
    replaces the config master seed for this agent when given.
    """
    if not 0 <= agent_id < config.m_agents:
        raise ProtocolError(
            f"agent id {agent_id} out of range for {config.m_agents} agents"
        )
    master = config.master_seed if seed is None else seed
    agent_seqs, _ = trial_seed_sequences(master, trial, config.m_agents)
    env_seq, policy_seed = agent_streams(agent_seqs[agent_id], config.n_arms)
    env = Environment(
        config.arms,
        env_seq,
        init="stationary" if config.init_states is None else config.init_states,
    )
    agent = AgentState(env, random.Random(policy_seed))
    rates = tuple(arm.rate for arm in config.arms)

    channel = _LineChannel(_connect(parse_address(server)))
    try:
        channel.send(
            {"kind": "JOIN", "agent": agent_id, "config_hash": config.config_hash()}
        )
        t = 1
        while True:
            message = channel.recv()
            kind = message["kind"]
            if kind == "SHUTDOWN":
                return
            if kind == "ERROR":
                raise ProtocolError(f"server rejected agent: {message.get('message')}")
            if kind != "POLICY":
                raise ProtocolError(f"unexpected message kind {kind!r}")
            l = int(message["episode"])
            raw = message["dynamics"]
            if config.policy in LEARNING_KINDS:
                # sampled / inflated dynamics are clamped at the source, so
                # anything outside the clamp indicates a corrupt broadcast
                valid = all(
                    DYNAMICS_EPS <= p <= 1.0 - DYNAMICS_EPS
                    for pair in raw
                    for p in pair
                )
            else:
                valid = message_is_truth(raw, config)
            if len(raw) != config.n_arms or not valid:
                raise ProtocolError(
                    f"episode {l} policy carries out-of-range dynamics"
                )
            dynamics = tuple(GilbertElliotDynamics(p01, p11) for p01, p11 in raw)
            policy = make_policy(
                config.policy, config.k_select, rates, dynamics,
                tuple(arm.dynamics for arm in config.arms),
            )
            if l == 1:
                agent.reset_beliefs(policy.dynamics)
            episode = EpisodeState.begin(l, t, int(message["budget"]), agent.counts)
            trace = run_agent_episode(agent, policy, episode, config.m_agents)
            t += trace.slots
            channel.send(
                {
                    "kind": "REPORT",
                    "episode": l,
                    "counts": agent.counts.to_flat(),
                    "pulls": list(agent.pulls),
                    "slots": trace.slots,
                    "reward": trace.total_reward,
                    "end_reason": trace.end_reason,
                }
            )
    finally:
        channel.close()


def message_is_truth(raw: Sequence[Sequence[float]], config: ExperimentConfig) -> bool:
    truth = [[arm.dynamics.theta01, arm.dynamics.theta11] for arm in config.arms]
    return [list(map(float, pair)) for pair in raw] == truth
