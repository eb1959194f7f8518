"""Core dynamics for M mobile robots serving N task queues in discrete time.

Time advances in unit slots.  Each location holds an unbounded FIFO queue of
tasks.  A robot parked at a nonempty location may complete exactly one task
per slot; moving to another location costs one full slot during which the
robot does nothing.  New tasks arrive as independent Bernoulli coin flips per
location per slot, and a task arriving in slot t can be worked on from slot
t+1 at the earliest (late arrivals).  Robots may never share a location, and
joint actions must keep that true one slot ahead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence

import numpy as np

SERVE = "serve"
IDLE = "idle"
SWITCH = "switch"


class InfeasibleActionError(RuntimeError):
    """A joint action violated admissibility or the collision rule."""


class RobotAction(NamedTuple):
    """One robot's move for the current slot.

    kind is "serve", "idle" or "switch".  dest is the target location for a
    switch and must be None otherwise.  Locations are indexed from 0 in code;
    serialized output uses 1-based labels.
    """

    kind: str
    dest: int | None = None


SERVE_ACTION = RobotAction(SERVE)
IDLE_ACTION = RobotAction(IDLE)


def switch_to(dest: int) -> RobotAction:
    return RobotAction(SWITCH, dest)


# A joint action is one RobotAction per robot, indexed like state.robots.
JointAction = tuple[RobotAction, ...]


class SystemState(NamedTuple):
    """Robot positions and queue lengths at the start of a slot.

    robots[r] is the location of robot r; entries are distinct.  queues[i]
    is the number of waiting tasks at location i, never negative.
    """

    robots: tuple[int, ...]
    queues: tuple[int, ...]


class SlotDelta(NamedTuple):
    """Per-location departures and arrivals realized in one slot."""

    departures: tuple[int, ...]
    arrivals: tuple[int, ...]


@dataclass(frozen=True)
class ModelConfig:
    """Static problem instance: sizes, arrival rates, discount factor."""

    num_locations: int
    num_robots: int
    arrival_probs: tuple[float, ...]
    discount: float

    def __post_init__(self) -> None:
        if self.num_locations < 1:
            raise ValueError("need at least one location")
        if not 1 <= self.num_robots <= self.num_locations:
            raise ValueError("robot count must be in [1, num_locations]")
        if len(self.arrival_probs) != self.num_locations:
            raise ValueError("arrival_probs length must match num_locations")
        for p in self.arrival_probs:
            if not 0.0 <= p <= 1.0:
                raise ValueError("arrival probabilities must lie in [0, 1]")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie strictly between 0 and 1")

    @classmethod
    def symmetric(
        cls, num_locations: int, num_robots: int, p: float, discount: float
    ) -> "ModelConfig":
        """Instance with the same arrival probability at every location."""
        return cls(num_locations, num_robots, (p,) * num_locations, discount)


def validate_state(state: SystemState, model: ModelConfig) -> None:
    """Raise ValueError unless state satisfies the standing invariants."""
    robots, queues = state
    if len(queues) != model.num_locations:
        raise ValueError("queue vector length must match num_locations")
    if len(robots) != model.num_robots:
        raise ValueError("robot vector length must match num_robots")
    for loc in robots:
        if not 0 <= loc < model.num_locations:
            raise ValueError("robot location out of range")
    if len(set(robots)) != len(robots):
        raise ValueError("robots may not share a location")
    for q in queues:
        if q < 0:
            raise ValueError("queue lengths must be non-negative")


def initial_state(model: ModelConfig) -> SystemState:
    """Canonical start: all queues empty, robot r parked at location r."""
    return SystemState(
        tuple(range(model.num_robots)), (0,) * model.num_locations
    )


def admissible_robot_actions(state: SystemState, robot: int) -> tuple[RobotAction, ...]:
    """Actions robot may take on its own: serve only where tasks wait,
    idle always, switch to any other location.

    Joint feasibility (the collision rule) is checked separately by
    is_feasible; this enumerates the per-robot menu only.
    """
    loc = state.robots[robot]
    out: list[RobotAction] = []
    if state.queues[loc] > 0:
        out.append(SERVE_ACTION)
    out.append(IDLE_ACTION)
    for dest in range(len(state.queues)):
        if dest != loc:
            out.append(switch_to(dest))
    return tuple(out)


def is_feasible(state: SystemState, joint: JointAction) -> bool:
    """True iff every per-robot action is admissible and no two robots end
    the slot headed for the same location.

    A robot that serves or idles stays put, so the check reduces to: the
    multiset of end-of-slot locations (stayers plus switch targets) has no
    repeats.  Counting is done with a bitmask since N is small.
    """
    robots, queues = state
    if len(joint) != len(robots):
        return False
    n = len(queues)
    occupied = 0
    for loc, act in zip(robots, joint):
        kind = act.kind
        if kind == SWITCH:
            dest = act.dest
            if dest is None or dest == loc or not 0 <= dest < n:
                return False
            loc = dest
        elif kind == SERVE:
            if act.dest is not None or queues[loc] <= 0:
                return False
        elif kind == IDLE:
            if act.dest is not None:
                return False
        else:
            return False
        bit = 1 << loc
        if occupied & bit:
            return False
        occupied |= bit
    return True


def sample_arrivals(
    probs: Sequence[float], rng: np.random.Generator
) -> tuple[int, ...]:
    """Draw one Bernoulli arrival indicator per location.

    Uses one uniform per location in location order, so a caller that
    pre-generates a (T, N) uniform block gets the same stream.
    """
    u = rng.random(len(probs)).tolist()
    return tuple(1 if u[i] < probs[i] else 0 for i in range(len(probs)))


def step(
    state: SystemState, joint: JointAction, arrivals: Sequence[int]
) -> tuple[SystemState, SlotDelta]:
    """Advance one slot: serve, move, then add the slot's arrivals.

    Raises InfeasibleActionError for any inadmissible or colliding joint
    action; nothing is ever silently repaired.  Arrivals land after service,
    so a task arriving this slot cannot depart before the next one.
    """
    if not is_feasible(state, joint):
        raise InfeasibleActionError("infeasible action")
    robots, queues = state
    n = len(queues)
    if len(arrivals) != n:
        raise ValueError("arrival vector length must match num_locations")
    departures = [0] * n
    new_robots = robots
    moved = False
    for r, act in enumerate(joint):
        kind = act.kind
        if kind == SERVE:
            departures[robots[r]] = 1
        elif kind == SWITCH:
            if not moved:
                new_robots = list(robots)
                moved = True
            new_robots[r] = act.dest
    new_queues = []
    for i in range(n):
        a = arrivals[i]
        if a != 0 and a != 1:
            raise ValueError("arrival indicators must be 0 or 1")
        new_queues.append(queues[i] - departures[i] + a)
    next_state = SystemState(
        tuple(new_robots) if moved else robots, tuple(new_queues)
    )
    return next_state, SlotDelta(tuple(departures), tuple(arrivals))


def stage_cost(state: SystemState) -> int:
    """Per-slot holding cost: total number of waiting tasks."""
    return sum(state.queues)


@dataclass
class SlotLedger:
    """Running per-location counts of arrivals and departures.

    Both cumulative series are non-decreasing by construction; the ledger is
    the bookkeeping needed to audit conservation (queue growth equals
    arrivals minus departures) on a sample path.
    """

    arrivals_total: list[int]
    departures_total: list[int]
    slots: int = 0

    @classmethod
    def empty(cls, num_locations: int) -> "SlotLedger":
        return cls([0] * num_locations, [0] * num_locations)

    def record(self, delta: SlotDelta) -> None:
        for i, a in enumerate(delta.arrivals):
            self.arrivals_total[i] += a
        for i, d in enumerate(delta.departures):
            self.departures_total[i] += d
        self.slots += 1

    def totals(self) -> tuple[int, int]:
        return sum(self.arrivals_total), sum(self.departures_total)


def iter_joint_actions(state: SystemState) -> Iterator[JointAction]:
    """All feasible joint actions, in deterministic per-robot menu order."""
    import itertools

    menus = [
        admissible_robot_actions(state, r) for r in range(len(state.robots))
    ]
    for joint in itertools.product(*menus):
        if is_feasible(state, joint):
            yield joint
