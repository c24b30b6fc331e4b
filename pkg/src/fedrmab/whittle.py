"""Whittle index computation for two-state restless arms.

Two independent routes are provided and cross-checked in the test suite:

* ``whittle_closed`` evaluates the per-regime closed form (one branch set
  for positively correlated arms, theta11 >= theta01, and one for
  negatively correlated arms).
* ``whittle_numeric`` solves the subsidized single-arm belief MDP by
  average-reward relative value iteration on a truncated chain of reachable
  beliefs, then bisects the subsidy to the indifference point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .belief import crossing_time, k_step, propagate, stationary_belief
from .env import GilbertElliotDynamics
from .errors import SolverConvergenceError


@dataclass(frozen=True)
class SubsidyProblem:
    """Single arm with a passivity subsidy added to the passive action."""

    dyn: GilbertElliotDynamics
    rate: float
    subsidy: float


@dataclass(frozen=True)
class BeliefChain:
    """Finite belief MDP support: passive trajectories plus a stationary sink.

    Passive trajectories from each seed belief are truncated once they come
    within ``trunc_tol`` of the stationary belief (or after ``max_steps``)
    and collapse into the sink, which is its own passive successor.  Active
    transitions from any node land on the observation-reset nodes.
    """

    nodes: np.ndarray
    passive_succ: np.ndarray
    idx_obs_bad: int
    idx_obs_good: int
    sink: int
    seed_nodes: tuple


@dataclass
class SingleArmSolution:
    values: np.ndarray
    gain: float
    active: np.ndarray
    threshold: Optional[float]
    iterations: int

    @property
    def active_set(self) -> frozenset:
        return frozenset(int(i) for i in np.nonzero(self.active)[0])

    @property
    def passive_set(self) -> frozenset:
        return frozenset(int(i) for i in np.nonzero(~self.active)[0])


def build_belief_chain(
    dyn: GilbertElliotDynamics,
    extra: Sequence[float] = (),
    trunc_tol: float = 1e-9,
    max_steps: int = 512,
) -> BeliefChain:
    b0 = stationary_belief(dyn)
    seeds = [dyn.theta01, dyn.theta11, *extra]
    nodes: list = []
    succ: list = []
    entries = []
    for seed in seeds:
        entries.append(len(nodes))
        b = min(max(float(seed), 0.0), 1.0)
        steps = 0
        while True:
            nodes.append(b)
            succ.append(len(nodes))
            steps += 1
            if abs(b - b0) < trunc_tol or steps >= max_steps:
                succ[-1] = -1
                break
            b = propagate(dyn, b)
    sink = len(nodes)
    nodes.append(b0)
    succ.append(sink)
    succ = [sink if s == -1 else s for s in succ]
    return BeliefChain(
        nodes=np.asarray(nodes, dtype=float),
        passive_succ=np.asarray(succ, dtype=np.intp),
        idx_obs_bad=entries[0],
        idx_obs_good=entries[1],
        sink=sink,
        seed_nodes=tuple(entries),
    )


def _detect_threshold(nodes: np.ndarray, active: np.ndarray) -> Optional[float]:
    if active.all():
        return -math.inf
    if not active.any():
        return math.inf
    passive_max = nodes[~active].max()
    active_min = nodes[active].min()
    if passive_max > active_min:
        return None  # active set is not an upper interval of the beliefs
    return 0.5 * (passive_max + active_min)


def solve_subsidy(
    problem: SubsidyProblem,
    chain: BeliefChain,
    tol: float = 1e-9,
    max_iter: int = 200_000,
    h_init: Optional[np.ndarray] = None,
) -> SingleArmSolution:
    """Relative value iteration for the average-reward subsidized arm.

    Active at belief b: immediate reward b*rate plus continuation through
    the observation-reset nodes.  Passive: the subsidy plus the deterministic
    passive successor.  The sink is the fixed reference node.  Ties at exact
    indifference are classified active.
    """
    nodes = chain.nodes
    succ = chain.passive_succ
    sink = chain.sink
    ig, ib = chain.idx_obs_good, chain.idx_obs_bad
    lam = problem.subsidy

    h = np.zeros(len(nodes)) if h_init is None else np.asarray(h_init, dtype=float).copy()
    immediate = nodes * problem.rate
    complement = 1.0 - nodes

    gain = math.nan
    span = math.inf
    for iteration in range(1, max_iter + 1):
        q1 = immediate + nodes * h[ig] + complement * h[ib]
        q0 = lam + h[succ]
        bellman = np.maximum(q1, q0)
        delta = bellman - h
        dmax = float(delta.max())
        dmin = float(delta.min())
        span = dmax - dmin
        h = bellman - bellman[sink]
        if span < tol:
            gain = 0.5 * (dmax + dmin)
            break
    else:
        raise SolverConvergenceError("subsidized arm solver did not converge", span)

    q1 = immediate + nodes * h[ig] + complement * h[ib]
    q0 = lam + h[succ]
    active = q1 >= q0
    return SingleArmSolution(
        values=h,
        gain=gain,
        active=active,
        threshold=_detect_threshold(nodes, active),
        iterations=iteration,
    )


def whittle_numeric(
    dyn: GilbertElliotDynamics,
    rate: float,
    b: float,
    tol: float = 1e-4,
    solver_tol: float = 1e-10,
    max_bisect: int = 60,
    chain: Optional[BeliefChain] = None,
    query_node: Optional[int] = None,
) -> float:
    """Index via bisection on the subsidy for the sign change of Q1 - Q0 at b.

    The index provably lies in [0, rate], which brackets the search.  Pass a
    prebuilt chain seeded with b (and the matching query node) to amortize
    construction over a grid of beliefs.
    """
    if chain is None:
        chain = build_belief_chain(dyn, extra=(b,))
        query_node = chain.seed_nodes[-1]
    if query_node is None:
        raise ValueError("query_node is required when passing a prebuilt chain")
    query = query_node
    lo, hi = 0.0, rate
    h = None
    for _ in range(max_bisect):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        solution = solve_subsidy(
            SubsidyProblem(dyn, rate, mid), chain, tol=solver_tol, h_init=h
        )
        h = solution.values
        if solution.active[query]:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def whittle_closed(
    dyn: GilbertElliotDynamics,
    rate: float,
    b: float,
    crossing_cap: int = 10_000,
) -> float:
    """Closed-form Whittle index, branch-selected by the dynamics regime.

    Positively correlated arms (theta11 >= theta01) use the crossing time of
    the passive climb from theta01; negatively correlated arms use the
    one-step images of b and theta11.  The result always lies in [0, rate].
    """
    t01, t11 = dyn.theta01, dyn.theta11
    b = min(max(b, 0.0), 1.0)
    b0 = stationary_belief(dyn)

    if t11 >= t01:
        if b <= t01 or b >= t11:
            w = b
        elif b < b0:
            steps = crossing_time(dyn, t01, b, cap=crossing_cap)
            if steps is None:
                # b is numerically pinned to the stationary point
                w = b / (1.0 - t11 + b)
            else:
                drift = b - propagate(dyn, b)
                landing = k_step(dyn, t01, steps)
                w = (drift * (steps + 1) + landing) / (
                    1.0 - t11 + drift * steps + landing
                )
        else:
            w = b / (1.0 - t11 + b)
    else:
        if b <= t11 or b >= t01:
            w = b
        else:
            tb = propagate(dyn, b)
            t_of_t11 = propagate(dyn, t11)
            if b < b0:
                w = (b + t01 - tb) / (1.0 + t01 - t_of_t11 + tb - b)
            elif b < t_of_t11:
                w = t01 / (1.0 + t01 - t_of_t11)
            else:
                w = t01 / (1.0 + t01 - b)

    return min(max(w * rate, 0.0), rate)


def verify_indexability(
    dyn: GilbertElliotDynamics,
    rate: float,
    lambda_grid: Sequence[float],
    solver_tol: float = 1e-10,
) -> tuple:
    """Check that the passive set grows monotonically along an ascending grid.

    Returns ``(indexable, trace)`` where trace holds the passive node set per
    subsidy value.
    """
    grid = list(lambda_grid)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("lambda grid must be strictly ascending")
    chain = build_belief_chain(dyn)
    trace = []
    previous: frozenset = frozenset()
    indexable = True
    h = None
    for lam in grid:
        solution = solve_subsidy(SubsidyProblem(dyn, rate, lam), chain, tol=solver_tol, h_init=h)
        h = solution.values
        passive = solution.passive_set
        if not previous.issubset(passive):
            indexable = False
        trace.append(passive)
        previous = passive
    return indexable, trace
