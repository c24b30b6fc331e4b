import random

import pytest

from fedrmab.config import benchmark_arms
from fedrmab.env import GilbertElliotDynamics


@pytest.fixture(scope="session")
def four_channel_arms():
    return benchmark_arms()


def random_dynamics(rng: random.Random, lo: float = 0.02, hi: float = 0.98) -> GilbertElliotDynamics:
    return GilbertElliotDynamics(rng.uniform(lo, hi), rng.uniform(lo, hi))
