import dataclasses
import socket
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedrmab.config import ExperimentConfig, benchmark_arms
from fedrmab.errors import ProtocolError
from fedrmab.fednet import (
    agent_run,
    decode_message,
    encode_message,
    parse_address,
    serve,
)
from fedrmab.harness import render_csv, run_monte_carlo


def small_config(**overrides):
    base = dict(
        arms=benchmark_arms(), policy="fedtswi", m_agents=1,
        k_select=2, episodes=10, master_seed=2024,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


def start_server(config, **kwargs):
    """Start serve() on an ephemeral port; returns (thread, address, box)."""
    box = {}
    ready = threading.Event()

    def callback(addr):
        box["address"] = f"{addr[0]}:{addr[1]}"
        ready.set()

    def target():
        try:
            box["records"] = serve("127.0.0.1:0", config, ready_callback=callback, **kwargs)
        except ProtocolError as exc:
            box["error"] = exc
            ready.set()

    thread = threading.Thread(target=target, daemon=True)
    thread.start()
    assert ready.wait(10)
    return thread, box.get("address"), box


finite_floats = st.floats(allow_nan=False, allow_infinity=False, width=64)


class TestCodec:
    @given(
        episode=st.integers(min_value=0, max_value=10**9),
        counts=st.lists(st.integers(min_value=0, max_value=10**12), max_size=16),
        pulls=st.lists(st.integers(min_value=0), max_size=8),
        slots=st.integers(min_value=0),
        reward=finite_floats,
        reason=st.sampled_from(["budget", "doubling"]),
    )
    @settings(max_examples=200, deadline=None)
    def test_report_round_trip(self, episode, counts, pulls, slots, reward, reason):
        message = {
            "kind": "REPORT",
            "episode": episode,
            "counts": counts,
            "pulls": pulls,
            "slots": slots,
            "reward": reward,
            "end_reason": reason,
        }
        assert decode_message(encode_message(message)) == message

    @given(dynamics=st.lists(st.tuples(finite_floats, finite_floats), max_size=6))
    @settings(max_examples=200, deadline=None)
    def test_policy_round_trip_is_float_exact(self, dynamics):
        message = {
            "kind": "POLICY",
            "episode": 3,
            "dynamics": [list(pair) for pair in dynamics],
            "budget": 7,
        }
        assert decode_message(encode_message(message)) == message

    def test_rejects_unknown_kind(self):
        with pytest.raises(ProtocolError):
            encode_message({"kind": "GOSSIP"})
        with pytest.raises(ProtocolError):
            decode_message(b'{"kind": "GOSSIP"}\n')
        with pytest.raises(ProtocolError):
            decode_message(b"not json\n")

    def test_parse_address(self):
        assert parse_address("127.0.0.1:9000") == ("127.0.0.1", 9000)
        with pytest.raises(ProtocolError):
            parse_address("localhost")
        with pytest.raises(ProtocolError):
            parse_address("host:port")


class TestTransportTransparency:
    def test_single_agent_loopback_matches_in_process(self):
        config = small_config()
        local = run_monte_carlo(config)  # trials=1
        thread, address, box = start_server(config)
        agent_run(address, 0, config)
        thread.join(30)
        assert "records" in box
        assert render_csv(local, config.n_arms) == render_csv(box["records"], config.n_arms)

    def test_known_dynamics_policy_over_loopback(self):
        config = small_config(policy="wi-known", episodes=6)
        local = run_monte_carlo(config)
        thread, address, box = start_server(config)
        agent_run(address, 0, config)
        thread.join(30)
        assert render_csv(local, config.n_arms) == render_csv(box["records"], config.n_arms)

    def test_two_agent_run_completes(self):
        config = small_config(m_agents=2, episodes=6)
        thread, address, box = start_server(config)
        threads = [
            threading.Thread(target=agent_run, args=(address, i, config), daemon=True)
            for i in range(2)
        ]
        for t in threads:
            t.start()
        thread.join(30)
        for t in threads:
            t.join(10)
        assert len(box["records"]) == 6


class TestHandshake:
    def test_config_hash_mismatch_rejected(self):
        config = small_config(episodes=3)
        tampered = dataclasses.replace(config, master_seed=config.master_seed + 1)
        thread, address, box = start_server(config, timeout=20)
        with pytest.raises(ProtocolError, match="rejected"):
            agent_run(address, 0, tampered)
        # the correctly configured agent still completes the run
        agent_run(address, 0, config)
        thread.join(30)
        assert len(box["records"]) == 3

    def test_duplicate_agent_id_rejected(self):
        config = small_config(m_agents=2, episodes=2)
        thread, address, box = start_server(config, timeout=20)
        first = threading.Thread(target=agent_run, args=(address, 0, config), daemon=True)
        first.start()
        with pytest.raises(ProtocolError, match="rejected"):
            agent_run(address, 0, config)
        agent_run(address, 1, config)
        thread.join(30)
        first.join(10)
        assert len(box["records"]) == 2

    def test_agent_id_out_of_range(self):
        config = small_config()
        with pytest.raises(ProtocolError):
            agent_run("127.0.0.1:1", 5, config)


class TestFailFast:
    def test_agent_disconnect_aborts_server_with_episode(self):
        config = small_config(episodes=50)

        def flaky_agent(address):
            # join, receive one policy, then vanish without reporting
            from fedrmab.fednet import _LineChannel, _connect, parse_address

            channel = _LineChannel(_connect(parse_address(address)))
            channel.send(
                {"kind": "JOIN", "agent": 0, "config_hash": config.config_hash()}
            )
            channel.recv()  # POLICY for episode 1
            channel.close()

        thread, address, box = start_server(config, timeout=15)
        flaky_agent(address)
        thread.join(30)
        assert "error" in box
        assert "episode 1" in str(box["error"])

    def test_out_of_range_policy_aborts_agent(self):
        config = small_config()

        listener = socket.create_server(("127.0.0.1", 0))
        host, port = listener.getsockname()

        def fake_server():
            conn, _ = listener.accept()
            rfile = conn.makefile("rb")
            rfile.readline()  # JOIN
            conn.sendall(
                encode_message(
                    {
                        "kind": "POLICY",
                        "episode": 1,
                        "dynamics": [[2.0, 0.5]] * 4,
                        "budget": 1,
                    }
                )
            )
            rfile.readline()  # wait for whatever comes back
            conn.close()

        thread = threading.Thread(target=fake_server, daemon=True)
        thread.start()
        with pytest.raises(ProtocolError, match="out-of-range"):
            agent_run(f"{host}:{port}", 0, config)
        listener.close()
