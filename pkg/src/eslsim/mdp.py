"""Exact solver on a truncated copy of the allocation problem.

Queues are capped at C tasks; an arrival to a full queue is discarded, with
its probability mass folded into the no-arrival branch, which keeps every
transition row stochastic.  States, feasible joint actions and the kernel
are enumerated exhaustively, value iteration runs to a sup-norm tolerance,
and the optimality checker compares the serve-longest rule against every
single-robot deviation through the Q-values.  Conclusions are read only at
interior states (all queues at least `margin` below the cap) so boundary
distortion from dropped arrivals cannot leak in.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .model import (
    IDLE_ACTION,
    SERVE,
    SWITCH,
    JointAction,
    ModelConfig,
    RobotAction,
    SystemState,
    iter_joint_actions,
    stage_cost,
)
from .policies import esl_decide

DEFAULT_STATE_BUDGET = 5_000_000


class StateSpaceTooLargeError(RuntimeError):
    """Enumeration would exceed the configured state budget."""


@dataclass(frozen=True)
class TruncatedMdp:
    """Flattened enumeration of the capped problem.

    states[i] owns actions[sa_offsets[i]:sa_offsets[i+1]] in the
    state-action axis; state-action k owns transition entries
    tr_offsets[k]:tr_offsets[k+1] in (tr_next, tr_prob).  sa_cost[k] is the
    stage cost of the owning state (cost does not depend on the action).
    """

    config: ModelConfig
    cap: int
    states: tuple[SystemState, ...]
    index: dict
    actions: tuple[JointAction, ...]
    sa_offsets: np.ndarray
    sa_cost: np.ndarray
    tr_offsets: np.ndarray
    tr_next: np.ndarray
    tr_prob: np.ndarray

    def state_actions(self, state_id: int) -> tuple[JointAction, ...]:
        lo, hi = self.sa_offsets[state_id], self.sa_offsets[state_id + 1]
        return self.actions[lo:hi]


@dataclass(frozen=True)
class ValueTable:
    """Converged values plus the iteration trail."""

    values: np.ndarray
    iterations: int
    residual: float
    residual_history: tuple[float, ...]


def count_states(config: ModelConfig, cap: int) -> int:
    placements = math.perm(config.num_locations, config.num_robots)
    return placements * (cap + 1) ** config.num_locations


def build_truncated_mdp(
    config: ModelConfig,
    cap: int,
    state_budget: int = DEFAULT_STATE_BUDGET,
) -> TruncatedMdp:
    """Enumerate states, feasible joint actions and the transition kernel.

    Raises StateSpaceTooLargeError before allocating anything when the
    count of placements times queue vectors exceeds the budget.
    """
    if cap < 1:
        raise ValueError("queue cap must be at least 1")
    if count_states(config, cap) > state_budget:
        raise StateSpaceTooLargeError("state space too large")
    n = config.num_locations
    probs = config.arrival_probs
    states: list[SystemState] = []
    for placement in itertools.permutations(range(n), config.num_robots):
        for queues in itertools.product(range(cap + 1), repeat=n):
            states.append(SystemState(placement, queues))
    index = {state: i for i, state in enumerate(states)}

    actions: list[JointAction] = []
    sa_offsets = [0]
    sa_cost: list[float] = []
    tr_offsets = [0]
    tr_next: list[int] = []
    tr_prob: list[float] = []
    for state in states:
        robots, queues = state
        cost = float(stage_cost(state))
        for joint in iter_joint_actions(state):
            base = list(queues)
            movers = list(robots)
            for r, act in enumerate(joint):
                if act.kind == SWITCH:
                    movers[r] = act.dest
                elif act.kind == SERVE:
                    base[robots[r]] -= 1
            next_robots = tuple(movers)
            # per-location arrival branches; full queues drop the arrival
            options = []
            for i in range(n):
                p = probs[i]
                if base[i] >= cap or p == 0.0:
                    options.append(((0, 1.0),))
                elif p == 1.0:
                    options.append(((1, 1.0),))
                else:
                    options.append(((0, 1.0 - p), (1, p)))
            for combo in itertools.product(*options):
                prob = 1.0
                for _, q in combo:
                    prob *= q
                next_queues = tuple(
                    base[i] + combo[i][0] for i in range(n)
                )
                tr_next.append(index[SystemState(next_robots, next_queues)])
                tr_prob.append(prob)
            tr_offsets.append(len(tr_next))
            actions.append(joint)
            sa_cost.append(cost)
        sa_offsets.append(len(actions))
    return TruncatedMdp(
        config=config,
        cap=cap,
        states=tuple(states),
        index=index,
        actions=tuple(actions),
        sa_offsets=np.asarray(sa_offsets, dtype=np.int64),
        sa_cost=np.asarray(sa_cost, dtype=np.float64),
        tr_offsets=np.asarray(tr_offsets, dtype=np.int64),
        tr_next=np.asarray(tr_next, dtype=np.int64),
        tr_prob=np.asarray(tr_prob, dtype=np.float64),
    )


def value_iteration(
    mdp: TruncatedMdp, tol: float, max_sweeps: int = 100_000
) -> ValueTable:
    """Two-buffer Bellman iteration to a sup-norm residual below tol.

    Each sweep reads the previous table and writes a fresh one, so the
    update is a clean beta-contraction; the returned values sit within
    tol/(1-beta) of the truncated fixed point.
    """
    if tol <= 0.0:
        raise ValueError("tolerance must be positive")
    beta = mdp.config.discount
    values = np.zeros(len(mdp.states))
    seg_sa = mdp.sa_offsets[:-1]
    seg_tr = mdp.tr_offsets[:-1]
    history: list[float] = []
    for sweep in range(1, max_sweeps + 1):
        expected = np.add.reduceat(
            mdp.tr_prob * values[mdp.tr_next], seg_tr
        )
        q = mdp.sa_cost + beta * expected
        new_values = np.minimum.reduceat(q, seg_sa)
        residual = float(np.max(np.abs(new_values - values)))
        history.append(residual)
        values = new_values
        if residual < tol:
            return ValueTable(values, sweep, residual, tuple(history))
    raise RuntimeError("value iteration did not converge within max_sweeps")


def q_values(
    mdp: TruncatedMdp, table: ValueTable, state: SystemState
) -> dict[JointAction, float]:
    """Q(a) = stage cost + beta * E[V(next)] for every feasible joint."""
    state_id = mdp.index[state]
    beta = mdp.config.discount
    lo, hi = mdp.sa_offsets[state_id], mdp.sa_offsets[state_id + 1]
    out: dict[JointAction, float] = {}
    for k in range(lo, hi):
        a, b = mdp.tr_offsets[k], mdp.tr_offsets[k + 1]
        expected = float(
            np.dot(mdp.tr_prob[a:b], table.values[mdp.tr_next[a:b]])
        )
        out[mdp.actions[k]] = mdp.sa_cost[k] + beta * expected
    return out


@dataclass(frozen=True)
class Violation:
    """One failed optimality comparison at one interior state."""

    state: SystemState
    kind: str
    gap: float
    robot: int | None = None
    alternative: JointAction | None = None


def is_interior(state: SystemState, cap: int, margin: int) -> bool:
    return all(x <= cap - margin for x in state.queues)


def check_esl_optimality(
    mdp: TruncatedMdp,
    table: ValueTable,
    margin: int,
    tie_tol: float = 1e-9,
    rule=esl_decide,
    max_robots: int = 3,
    max_locations: int = 4,
) -> list[Violation]:
    """Audit the serve-longest rule against the exact Q-values.

    At every interior state the rule's joint action must (a) attain the
    minimum Q up to tie_tol, (b) for each robot with local work, beat every
    single-robot deviation to idle or switch strictly, and (c) for each
    robot the rule sends to a queue, beat both idling and switching to any
    strictly shorter nonempty queue.  Equal-length targets may tie (the
    arrival rates are symmetric in the instances we check), which is why
    only strictly shorter targets are compared.  Returns all failures;
    empty list means the rule passed.
    """
    if margin < 1 or margin >= mdp.cap:
        raise ValueError("margin must satisfy 1 <= margin < cap")
    cfg = mdp.config
    if cfg.num_robots > max_robots or cfg.num_locations > max_locations:
        raise ValueError(
            "instance exceeds the joint-action enumeration caps; "
            "raise max_robots/max_locations explicitly to override"
        )
    violations: list[Violation] = []
    for state in mdp.states:
        if not is_interior(state, mdp.cap, margin):
            continue
        q = q_values(mdp, table, state)
        chosen = rule(state)
        if chosen not in q:
            violations.append(
                Violation(state, "rule-action-infeasible", math.inf)
            )
            continue
        q_star = q[chosen]
        q_min = min(q.values())
        if q_star > q_min + tie_tol:
            violations.append(Violation(state, "not-argmin", q_star - q_min))
        robots, queues = state
        for r, loc in enumerate(robots):
            here = chosen[r]
            if queues[loc] > 0:
                # local work: serving must strictly beat leaving or idling
                for alt_act in _robot_deviations(state, r):
                    alt = chosen[:r] + (alt_act,) + chosen[r + 1:]
                    alt_q = q.get(alt)
                    if alt_q is not None and alt_q <= q_star + tie_tol:
                        violations.append(
                            Violation(
                                state,
                                "serve-not-strict",
                                q_star - alt_q,
                                robot=r,
                                alternative=alt,
                            )
                        )
            elif here.kind == SWITCH:
                target_len = queues[here.dest]
                alt = chosen[:r] + (IDLE_ACTION,) + chosen[r + 1:]
                alt_q = q.get(alt)
                if alt_q is not None and alt_q <= q_star + tie_tol:
                    violations.append(
                        Violation(
                            state,
                            "idle-not-strict",
                            q_star - alt_q,
                            robot=r,
                            alternative=alt,
                        )
                    )
                for j in range(cfg.num_locations):
                    if j == loc or not 0 < queues[j] < target_len:
                        continue
                    alt = (
                        chosen[:r]
                        + (RobotAction(SWITCH, j),)
                        + chosen[r + 1:]
                    )
                    alt_q = q.get(alt)
                    if alt_q is not None and alt_q <= q_star + tie_tol:
                        violations.append(
                            Violation(
                                state,
                                "shorter-not-strict",
                                q_star - alt_q,
                                robot=r,
                                alternative=alt,
                            )
                        )
    return violations


def _robot_deviations(state: SystemState, robot: int):
    """Idle and every switch for one robot, excluding its current action."""
    loc = state.robots[robot]
    yield IDLE_ACTION
    for dest in range(len(state.queues)):
        if dest != loc:
            yield RobotAction(SWITCH, dest)


def monotonicity_violations(
    mdp: TruncatedMdp, table: ValueTable, tol: float = 1e-9
) -> list[tuple[SystemState, int]]:
    """States where adding one task at some location lowers the value.

    The optimal cost must be coordinate-wise non-decreasing in the queue
    vector; returns (state, location) pairs that break that, if any.
    """
    bad: list[tuple[SystemState, int]] = []
    for state in mdp.states:
        v = table.values[mdp.index[state]]
        robots, queues = state
        for i, x in enumerate(queues):
            if x >= mdp.cap:
                continue
            bumped = SystemState(
                robots, queues[:i] + (x + 1,) + queues[i + 1:]
            )
            if table.values[mdp.index[bumped]] < v - tol:
                bad.append((state, i))
    return bad
