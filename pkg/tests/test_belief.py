import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedrmab.belief import (
    crossing_time,
    k_step,
    propagate,
    stationary_belief,
    update_observed,
)
from fedrmab.env import GilbertElliotDynamics
from fedrmab.errors import DegenerateDynamicsError

from conftest import random_dynamics

probs = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


class TestStationaryBelief:
    def test_reference_pair(self):
        assert stationary_belief(GilbertElliotDynamics(0.20, 0.80)) == pytest.approx(0.5)

    def test_iid_chain_fixed_point(self):
        for p in (0.0, 0.1, 0.5, 0.73, 1.0):
            assert stationary_belief(GilbertElliotDynamics(p, p)) == pytest.approx(p)

    def test_asymmetric_pair(self):
        assert stationary_belief(GilbertElliotDynamics(0.9, 0.16)) == pytest.approx(0.9 / 1.74)

    def test_degenerate_pair_raises(self):
        with pytest.raises(DegenerateDynamicsError):
            stationary_belief(GilbertElliotDynamics(0.0, 1.0))


class TestPropagate:
    def test_endpoints(self):
        dyn = GilbertElliotDynamics(0.2, 0.8)
        assert propagate(dyn, 1.0) == pytest.approx(0.8)
        assert propagate(dyn, 0.0) == pytest.approx(0.2)

    def test_stationary_point_is_fixed(self):
        rng = random.Random(11)
        for _ in range(50):
            dyn = random_dynamics(rng)
            b0 = stationary_belief(dyn)
            assert propagate(dyn, b0) == pytest.approx(b0, abs=1e-12)


class TestUpdateObserved:
    def test_resets_to_transition_row(self):
        dyn = GilbertElliotDynamics(0.2, 0.8)
        assert update_observed(dyn, 1) == 0.8
        assert update_observed(dyn, 0) == 0.2

    def test_iid_chain(self):
        dyn = GilbertElliotDynamics(0.37, 0.37)
        assert update_observed(dyn, 0) == update_observed(dyn, 1) == 0.37


class TestKStep:
    def test_zero_steps_is_identity(self):
        dyn = GilbertElliotDynamics(0.3, 0.6)
        for b in (0.0, 0.25, 1.0):
            assert k_step(dyn, b, 0) == b

    def test_one_step_matches_propagate(self):
        rng = random.Random(5)
        for _ in range(200):
            dyn = random_dynamics(rng, lo=0.0, hi=1.0)
            b = rng.random()
            assert k_step(dyn, b, 1) == pytest.approx(propagate(dyn, b), abs=1e-12)

    def test_iid_chain_collapses_immediately(self):
        dyn = GilbertElliotDynamics(0.42, 0.42)
        for j in (1, 2, 17):
            assert k_step(dyn, 0.9, j) == pytest.approx(0.42, abs=1e-15)

    def test_converges_to_stationary(self):
        dyn = GilbertElliotDynamics(0.2, 0.8)
        assert k_step(dyn, 0.2, 64) == pytest.approx(0.5, abs=1e-9)

    def test_matches_iterated_propagation(self):
        # the one-step recursion is the ground truth for the closed form
        rng = random.Random(99)
        for _ in range(100):
            dyn = random_dynamics(rng)
            b = rng.random()
            j = rng.randint(1, 40)
            iterated = b
            for _ in range(j):
                iterated = propagate(dyn, iterated)
            assert k_step(dyn, b, j) == pytest.approx(iterated, abs=1e-12)

    def test_negative_steps_rejected(self):
        with pytest.raises(ValueError):
            k_step(GilbertElliotDynamics(0.2, 0.8), 0.5, -1)

    @given(t01=probs, t11=probs, b=probs, j=st.integers(min_value=1, max_value=100))
    @settings(max_examples=300, deadline=None)
    def test_band_property(self, t01, t11, b, j):
        if t01 == 0.0 and t11 == 1.0:
            return
        dyn = GilbertElliotDynamics(t01, t11)
        value = k_step(dyn, b, j)
        assert min(t01, t11) <= value <= max(t01, t11)
        assert 0.0 <= value <= 1.0

    @given(
        t01=st.floats(min_value=0.01, max_value=0.99),
        t11=st.floats(min_value=0.01, max_value=0.99),
        b=probs,
        i=st.integers(min_value=0, max_value=40),
        j=st.integers(min_value=0, max_value=40),
    )
    @settings(max_examples=300, deadline=None)
    def test_semigroup(self, t01, t11, b, i, j):
        dyn = GilbertElliotDynamics(t01, t11)
        assert k_step(dyn, k_step(dyn, b, i), j) == pytest.approx(
            k_step(dyn, b, i + j), abs=1e-12
        )

    def test_monotone_geometric_convergence(self):
        rng = random.Random(3)
        for _ in range(40):
            dyn = random_dynamics(rng)
            b0 = stationary_belief(dyn)
            rate = abs(dyn.theta11 - dyn.theta01)
            b = rng.random()
            gaps = [abs(k_step(dyn, b, j) - b0) for j in range(0, 12)]
            for g_now, g_next in zip(gaps, gaps[1:]):
                assert g_next <= g_now + 1e-12
                assert g_next <= rate * g_now + 1e-12


class TestCrossingTime:
    def test_crosses_in_one_step(self):
        dyn = GilbertElliotDynamics(0.2, 0.8)
        # T^1(0.2) = 0.32 > 0.3
        assert crossing_time(dyn, 0.2, 0.3) == 1

    def test_never_crosses_above_limit(self):
        dyn = GilbertElliotDynamics(0.2, 0.8)
        assert crossing_time(dyn, 0.2, 0.6) is None

    def test_threshold_below_start(self):
        dyn = GilbertElliotDynamics(0.2, 0.8)
        assert crossing_time(dyn, 0.4, 0.1) == 1

    def test_matches_linear_scan(self):
        rng = random.Random(17)
        for _ in range(300):
            dyn = random_dynamics(rng)
            start = rng.random()
            threshold = rng.random()
            cap = 200
            expected = None
            b = start
            for j in range(1, cap + 1):
                b = propagate(dyn, b)
                if b > threshold:
                    expected = j
                    break
            assert crossing_time(dyn, start, threshold, cap=cap) == expected

    def test_cap_bounds_the_answer(self):
        dyn = GilbertElliotDynamics(0.2, 0.8)
        # crossing at j=4: T^j(0.2) = 0.32, 0.392, 0.4352, 0.46112
        assert crossing_time(dyn, 0.2, 0.45) == 4
        assert crossing_time(dyn, 0.2, 0.45, cap=3) is None

    def test_cap_validation(self):
        with pytest.raises(ValueError):
            crossing_time(GilbertElliotDynamics(0.2, 0.8), 0.2, 0.3, cap=0)
