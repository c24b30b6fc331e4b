import math
import random

import numpy as np
import pytest

from fedrmab.belief import stationary_belief
from fedrmab.env import ArmConfig, Environment, GilbertElliotDynamics, new_environment


def _arm(t01, t11, rate=1.0):
    return ArmConfig(GilbertElliotDynamics(t01, t11), rate)


class TestConstruction:
    def test_reference_instance_is_valid(self, four_channel_arms):
        env = new_environment(four_channel_arms, seed=0)
        assert len(env.true_states) == 4
        assert all(s in (0, 1) for s in env.true_states)
        assert env.t == 0

    def test_empty_arm_list_rejected(self):
        with pytest.raises(ValueError):
            new_environment([], seed=0)

    def test_rate_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            _arm(0.2, 0.8, rate=1.5)
        with pytest.raises(ValueError):
            _arm(0.2, 0.8, rate=-0.1)

    def test_probability_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            GilbertElliotDynamics(-0.2, 0.5)
        with pytest.raises(ValueError):
            GilbertElliotDynamics(0.2, 1.5)

    def test_fixed_initial_states(self):
        env = new_environment([_arm(0.5, 0.5), _arm(0.5, 0.5)], seed=1, init=(1, 0))
        assert env.true_states == [1, 0]

    def test_bad_initial_states_rejected(self):
        with pytest.raises(ValueError):
            new_environment([_arm(0.5, 0.5)], seed=1, init=(2,))
        with pytest.raises(ValueError):
            new_environment([_arm(0.5, 0.5)], seed=1, init=(1, 0))
        with pytest.raises(ValueError):
            new_environment([_arm(0.5, 0.5)], seed=1, init="everything-good")


class TestStep:
    def test_absorbing_chain_stays_good(self):
        env = new_environment([_arm(0.0, 1.0, rate=0.9)], seed=0, init=(1,))
        for _ in range(20):
            (obs,) = env.step([0])
            assert obs.state == 1
            assert obs.reward == pytest.approx(0.9)

    def test_bad_state_pays_zero(self):
        env = new_environment([_arm(0.0, 0.0, rate=0.7)], seed=0, init=(0,))
        (obs,) = env.step([0])
        assert obs.state == 0
        assert obs.reward == 0.0

    def test_reward_is_rate_times_state(self):
        env = new_environment([_arm(0.4, 0.6, 0.3), _arm(0.4, 0.6, 0.8)], seed=5)
        for _ in range(50):
            for obs in env.step([0, 1]):
                rate = env.arms[obs.arm].rate
                assert obs.reward == rate * obs.state

    def test_deterministic_cycle_ignores_selection(self):
        # theta01=1, theta11=0 flips the state every slot
        arms = [_arm(1.0, 0.0), _arm(1.0, 0.0)]
        env = new_environment(arms, seed=0, init=(0, 1))
        seen = []
        for t in range(8):
            (obs,) = env.step([0])  # arm 1 never selected
            seen.append(obs.state)
            assert env.true_states[1] == (1 + t + 1) % 2
        assert seen == [0, 1, 0, 1, 0, 1, 0, 1]

    def test_pre_transition_state_is_observed(self):
        env = new_environment([_arm(1.0, 0.0)], seed=0, init=(0,))
        (obs,) = env.step([0])
        assert obs.state == 0  # the slot-t state, not the freshly flipped one
        assert env.true_states[0] == 1

    def test_duplicate_selection_rejected(self):
        env = new_environment([_arm(0.5, 0.5), _arm(0.5, 0.5)], seed=0)
        with pytest.raises(ValueError):
            env.step([0, 0])

    def test_cardinality_enforced_when_requested(self):
        env = new_environment([_arm(0.5, 0.5), _arm(0.5, 0.5)], seed=0)
        with pytest.raises(ValueError):
            env.step([0], expect_k=2)

    def test_out_of_range_rejected(self):
        env = new_environment([_arm(0.5, 0.5)], seed=0)
        with pytest.raises(ValueError):
            env.step([3])

    def test_slot_counter_increments(self):
        env = new_environment([_arm(0.5, 0.5)], seed=0)
        env.step([0])
        env.step([0])
        assert env.t == 2


class TestDeterminism:
    def test_same_seed_identical_observations(self, four_channel_arms):
        def trace(seed):
            env = new_environment(four_channel_arms, seed=seed)
            out = []
            for t in range(200):
                out.append(tuple(env.step([t % 4, (t + 1) % 4])))
            return out

        assert trace(123) == trace(123)
        assert trace(123) != trace(124)

    def test_adding_arms_preserves_existing_trajectories(self):
        arms3 = [_arm(0.3, 0.7), _arm(0.5, 0.5), _arm(0.8, 0.2)]
        env_a = new_environment(arms3, seed=7, init=(0, 0, 0))
        env_b = new_environment(arms3 + [_arm(0.4, 0.6)], seed=7, init=(0, 0, 0, 0))
        for _ in range(100):
            env_a.step([0])
            env_b.step([0])
            assert env_a.true_states == env_b.true_states[:3]


class TestStationaryOccupancy:
    def test_unselected_arm_matches_stationary_frequency(self):
        # empirical state-1 frequency of a never-selected arm vs b0,
        # 3-sigma binomial tolerance at T = 1e5
        arm = _arm(0.2, 0.8)
        env = new_environment([arm, _arm(0.5, 0.5)], seed=2)
        horizon = 100_000
        good = 0
        for _ in range(horizon):
            good += env.true_states[0]
            env.step([1])
        b0 = stationary_belief(arm.dynamics)
        tolerance = 3.0 * math.sqrt(b0 * (1.0 - b0) / horizon)
        assert abs(good / horizon - b0) < tolerance
