"""Belief-state arithmetic for a single two-state arm.

The belief is the scalar probability that the arm currently sits in the
good state.  While an arm is left unobserved the belief follows the
deterministic passive update ``b -> b*theta11 + (1-b)*theta01`` and
converges geometrically to the stationary point
``b0 = theta01 / (theta01 + 1 - theta11)``.
"""

from __future__ import annotations

import math
from typing import Optional

from .env import GilbertElliotDynamics
from .errors import DegenerateDynamicsError


def _clamp01(x: float) -> float:
    # absorbs float drift so downstream branch selection never misfires
    if x < 0.0:
        return 0.0
    if x > 1.0:
        return 1.0
    return x


def stationary_belief(dyn: GilbertElliotDynamics) -> float:
    """Fixed point of the passive update, theta01 / (theta01 + 1 - theta11)."""
    denom = dyn.theta01 + 1.0 - dyn.theta11
    if denom == 0.0:
        raise DegenerateDynamicsError(
            f"absorbing pair (theta01={dyn.theta01}, theta11={dyn.theta11}) "
            "has no stationary belief"
        )
    return _clamp01(dyn.theta01 / denom)


def propagate(dyn: GilbertElliotDynamics, b: float) -> float:
    """One passive step: b*theta11 + (1-b)*theta01."""
    return _clamp01(b * dyn.theta11 + (1.0 - b) * dyn.theta01)


def update_observed(dyn: GilbertElliotDynamics, observed_state: int) -> float:
    """Belief after observing the true state: the matching transition row."""
    return dyn.theta11 if observed_state else dyn.theta01


def k_step(dyn: GilbertElliotDynamics, b: float, j: int) -> float:
    """Closed-form j-step passive update.

    Uses the eigendecomposition of the two-state chain:
    ``T^j(b) = b0 + (theta11-theta01)^j * (b - b0)``.  For j >= 1 the result
    provably lies in [min(theta01,theta11), max(theta01,theta11)]; the
    output is clamped into that band so float drift cannot violate it.
    """
    if j < 0:
        raise ValueError(f"step count must be nonnegative, got {j}")
    if j == 0:
        return _clamp01(b)
    b0 = stationary_belief(dyn)
    value = b0 + (dyn.theta11 - dyn.theta01) ** j * (b - b0)
    lo = min(dyn.theta01, dyn.theta11)
    hi = max(dyn.theta01, dyn.theta11)
    if value < lo:
        return lo
    if value > hi:
        return hi
    return value


def crossing_time(
    dyn: GilbertElliotDynamics,
    from_belief: float,
    threshold: float,
    cap: int = 10_000,
) -> Optional[int]:
    """Smallest j in [1, cap] with T^j(from_belief) > threshold, else None.

    None means the passive trajectory never crosses: the iterates converge
    monotonically (or with damped oscillation) to the stationary belief, so
    once the remaining envelope sits at or below the threshold no later step
    can exceed it.
    """
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    b0 = stationary_belief(dyn)
    lam = dyn.theta11 - dyn.theta01

    first = propagate(dyn, from_belief)
    if first > threshold:
        return 1
    if lam == 0.0:
        return None  # memoryless chain: T^j = b0 = first for all j >= 1

    if lam > 0.0 and from_belief < b0:
        # monotone climb toward b0: either never crosses or crosses at a
        # step computable from the geometric gap ratio
        if threshold >= b0:
            return None
        ratio = (b0 - threshold) / (b0 - from_belief)
        j = int(math.floor(math.log(ratio) / math.log(lam))) + 1
        j = max(j, 1)
        # one-ulp safety: walk the candidate onto the exact crossing
        while j <= cap and k_step(dyn, from_belief, j) <= threshold:
            j += 1
        while j > 1 and k_step(dyn, from_belief, j - 1) > threshold:
            j -= 1
        return j if j <= cap else None

    # remaining cases shrink toward b0 from above or oscillate; the sup of
    # all future iterates after step j is b0 + |lam|^(j+1) * |from - b0|
    gap = abs(from_belief - b0)
    value = first
    for j in range(2, cap + 1):
        gap_bound = b0 + abs(lam) ** j * gap
        if gap_bound <= threshold:
            return None
        value = propagate(dyn, value)
        if value > threshold:
            return j
    return None
